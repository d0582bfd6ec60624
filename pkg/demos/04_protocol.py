"""Five-fold protocol with re-paired negatives, end to end.

Run with ``python3 demos/04_protocol.py``.
"""
from kinverify.datakit import even_plan, synth_generate
from kinverify.evalkit import ProtocolConfig, run_protocol

# Two relations; the second child leans toward one parent per family.
data = {
    "FM-S": synth_generate(d=16, n_pos=500, seed=1).positives,
    "FM-D": synth_generate(d=16, n_pos=500, seed=2, resemblance=(0.8, 0.2)).positives,
}
plan = even_plan(500)
print("fold ranges", plan)

for kind in ("concat-baseline", "abm", "sbm", "rsbm"):
    report = run_protocol(ProtocolConfig(kind=kind, seed=0), data, plan, jobs=5)
    print(report.to_text().splitlines()[-1])

# Reports serialize deterministically, so two runs compare byte for byte.
again = run_protocol(ProtocolConfig(kind="sbm"), data, plan)
print("identical JSON:", again.to_json() == run_protocol(ProtocolConfig(kind="sbm"),
                                                          data, plan).to_json())
