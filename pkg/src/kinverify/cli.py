"""``kinverify`` command line: synth, extract, train, eval, predict."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import datakit, evalkit, facefeat, models, select, serialize
from .optim import SolverConfig

CACHE_ENV = "KINVERIFY_CACHE"
DEFAULT_CACHE = "kinverify-cache"


class CommandError(Exception):
    pass


def _cache_path(args):
    if args.cache is not None:
        return args.cache
    return os.environ.get(CACHE_ENV, DEFAULT_CACHE)


def _resolve(ref, base):
    p = Path(ref)
    return p if p.is_absolute() else Path(base) / p


def _features(ref, store, base):
    arr = store.read(ref)
    if arr is not None:
        return arr
    path = _resolve(ref, base)
    if path.is_file():
        return facefeat.extract_patch_grid(facefeat.read_pgm(path)).patches.astype("<f4")
    raise CommandError("no cached features and no image for %s" % ref)


def _load_dataset(manifest, store, relation=None):
    """Positive triples per relation, plus the (patches, per_patch) layout."""
    records = datakit.load_manifest(manifest)
    base = Path(manifest).parent
    data, layout = {}, None
    for rel in datakit.RELATIONS:
        recs = [r for r in records if r.relation == rel]
        if not recs or (relation is not None and rel != relation):
            continue
        rows = {"father": [], "mother": [], "child": []}
        for r in recs:
            for member in rows:
                arr = _features(getattr(r, member), store, base)
                if layout is None:
                    layout = arr.shape
                elif arr.shape != layout:
                    raise CommandError("feature shape %s of %s differs from %s"
                                       % (arr.shape, getattr(r, member), layout))
                rows[member].append(arr.astype(float).ravel())
        data[rel] = models.Triples(np.array(rows["father"]), np.array(rows["mother"]),
                                   np.array(rows["child"]), np.ones(len(recs), dtype=int),
                                   [r.family_id for r in recs])
    if not data:
        raise CommandError("manifest %s has no families%s"
                           % (manifest, "" if relation is None else " of relation " + relation))
    return data, layout


def _protocol_config(args, layout):
    patches, per_patch = layout
    return evalkit.ProtocolConfig(
        kind=args.model, block_level=args.block_level,
        feature_selection=args.feature_selection, lam=args.lam, gamma=args.gamma,
        alpha=args.alpha, T=args.T, K=min(args.K, patches), seed=args.seed,
        form=args.form, patches=patches, per_patch=per_patch,
        solver=SolverConfig(max_iterations=args.max_iter, tolerance=args.tol,
                            seed=args.seed),
    )


# -- commands ----------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = datakit.FeatureStore(args.cache or out / "cache")
    records = []
    for r, rel in enumerate(args.relations):
        sub_seed = int(datakit.substream(args.seed, "synth-relation", r).integers(2**63))
        if args.patch_mode:
            sd = datakit.synth_patch_generate(args.n_pos, args.patches, args.per_patch,
                                              args.n_planted, seed=sub_seed)
            shape = (args.patches, args.per_patch)
        else:
            sd = datakit.synth_generate(args.d, args.n_pos, args.rank, args.noise,
                                        sub_seed)
            shape = (1, args.d)
        pos = sd.positives
        for i in range(len(pos)):
            fid = "%s-%05d" % (rel, i)
            refs = {m: "synth/%s/%s" % (fid, m) for m in ("father", "mother", "child")}
            for m, ref in refs.items():
                store.write(ref, getattr(pos, m)[i].reshape(shape))
            records.append(datakit.FamilyRecord(fid, rel, refs["father"],
                                                refs["mother"], refs["child"]))
    datakit.write_manifest(out / "manifest.jsonl", records)
    print(json.dumps({"manifest": str(out / "manifest.jsonl"), "families": len(records),
                      "cache": str(store.root)}))
    return 0


def cmd_extract(args):
    store = datakit.FeatureStore(_cache_path(args))
    records = datakit.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    refs = sorted({getattr(r, m) for r in records for m in ("father", "mother", "child")})
    todo = [ref for ref in refs if store.read(ref) is None]
    missing = [str(_resolve(ref, base)) for ref in todo if not _resolve(ref, base).is_file()]
    if missing:
        raise CommandError("missing images:\n  " + "\n  ".join(missing))
    for ref in todo:
        grid = facefeat.extract_patch_grid(facefeat.read_pgm(_resolve(ref, base)))
        store.write(ref, grid.patches)
    print(json.dumps({"records": len(refs), "extracted": len(todo),
                      "cached": len(refs) - len(todo)}))
    return 0


def cmd_train(args):
    store = datakit.FeatureStore(_cache_path(args))
    data, layout = _load_dataset(args.manifest, store, args.relation)
    cfg = _protocol_config(args, layout)
    cfg.validate()
    triples = None
    for r, rel in enumerate(sorted(data)):
        pos = data[rel]
        both = pos.concat(datakit.generate_negatives(pos, datakit.substream(args.seed, "negatives", r)))
        triples = both if triples is None else triples.concat(both)
    if cfg.form is not None:
        triples = models.permute_roles(triples, cfg.form)
    gmap = cfg.gmap
    sel = None
    if cfg.feature_selection:
        sel = select.fit_selection(triples, cfg.gamma, cfg.K, cfg.solver, gmap)
    if cfg.block_level:
        if sel is None:
            every = list(range(gmap.patches))
            sel = select.PatchSelection(gmap.patches, every, every, every,
                                        *(np.zeros(gmap.patches) for _ in range(3)))
        model = models.fit_block_ensemble(cfg.kind, triples, sel, cfg.effective_lambda,
                                          cfg.alpha, cfg.T, cfg.solver, gmap)
    else:
        if sel is not None:
            triples = triples.select_columns(*(gmap.columns(sel.for_role(r))
                                               for r in ("father", "mother", "child")))
        model = models.fit_model(cfg.kind, triples, cfg.effective_lambda, cfg.alpha,
                                 cfg.T, cfg.solver)
    sidecar = {"lam": cfg.effective_lambda, "alpha": cfg.alpha, "T": cfg.T, "K": cfg.K,
               "gamma": cfg.gamma, "seed": cfg.seed, "model": cfg.kind,
               "block_level": cfg.block_level, "feature_selection": cfg.feature_selection,
               "relations": sorted(data), "patches": gmap.patches,
               "per_patch": gmap.per_patch, "form": cfg.form}
    if sel is not None and cfg.feature_selection:
        sidecar["selection"] = json.loads(sel.to_json())
        Path(args.output + ".selection.json").write_text(sel.to_json() + "\n")
    serialize.save_model(args.output, model, sidecar)
    print(json.dumps({"model": args.output, "kind": model.kind, "samples": len(triples)}))
    return 0


def cmd_eval(args):
    store = datakit.FeatureStore(_cache_path(args))
    data, layout = _load_dataset(args.manifest, store, args.relation)
    cfg = _protocol_config(args, layout)
    cfg.validate()
    if args.fold_plan:
        plans = datakit.load_fold_plan(args.fold_plan)
    else:
        plans = {rel: datakit.even_plan(len(pos)) for rel, pos in data.items()}
    report = evalkit.run_protocol(cfg, data, plans, jobs=args.jobs)
    prefix = args.output
    Path(prefix + ".json").write_text(report.to_json())
    Path(prefix + ".txt").write_text(report.to_text())
    if args.roc:
        report.write_roc_csv(args.roc)
    sys.stdout.write(report.to_text())
    return 0


def _member(value, store, base):
    if value is None:
        return None
    return _features(value, store, base).astype(float).ravel()


def cmd_predict(args):
    model, sidecar = serialize.load_model(args.model)
    store = datakit.FeatureStore(_cache_path(args))
    base = Path.cwd()
    mode = args.mode
    f = _member(args.father, store, base) if mode != "pair:mother" else None
    m = _member(args.mother, store, base) if mode != "pair:father" else None
    c = _member(args.child, store, base)
    needed = {"triple": (f, m, c), "pair:father": (f, c), "pair:mother": (m, c)}[mode]
    if any(x is None for x in needed):
        raise CommandError("mode %s needs %s" % (
            mode, {"triple": "--father, --mother and --child",
                   "pair:father": "--father and --child",
                   "pair:mother": "--mother and --child"}[mode]))
    sel = sidecar.get("selection")
    if sel is not None and model.kind != "block":
        gmap = select.GroupMap(sidecar["patches"], sidecar["per_patch"])
        f = None if f is None else f[gmap.columns(sel["father"])]
        m = None if m is None else m[gmap.columns(sel["mother"])]
        c = c[gmap.columns(sel["child"])]
    if mode == "triple":
        prob = models.predict(model, f, m, c)
    else:
        role = mode.split(":")[1]
        prob = models.predict_pair(model, f if role == "father" else m, c, role)
    print(json.dumps({"probability": float(prob),
                      "decision": int(1 if prob >= evalkit.THRESHOLD else -1)}))
    return 0


# -- parser ------------------------------------------------------------------

def _unit_interval(text):
    x = float(text)
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1, got %s" % text)
    return x


def _positive(kind):
    def parse(text):
        x = kind(text)
        if not x > 0:
            raise argparse.ArgumentTypeError("must be positive, got %s" % text)
        return x
    return parse


def _add_cache(p):
    p.add_argument("--cache", default=None,
                   help="feature cache directory (default: $%s or ./%s)"
                        % (CACHE_ENV, DEFAULT_CACHE))


def _add_model_flags(p):
    p.add_argument("--manifest", required=True, help="JSON-lines family manifest")
    _add_cache(p)
    p.add_argument("--model", choices=models.MODEL_KINDS, default="rsbm",
                   help="verification model")
    p.add_argument("--block-level", action="store_true",
                   help="one model per selected patch, fused by logistic regression")
    p.add_argument("--feature-selection", action="store_true",
                   help="spatially voted patch selection before fitting")
    p.add_argument("--K", type=_positive(int), default=select.DEFAULT_K,
                   help="patches kept per role")
    p.add_argument("--lam", type=_positive(float), default=None,
                   help="trace-norm weight (default 5.0, or 0.1 with --block-level)")
    p.add_argument("--gamma", type=_positive(float), default=select.DEFAULT_GAMMA,
                   help="L1 weight of the voting fit")
    p.add_argument("--alpha", type=_unit_interval, default=models.DEFAULT_ALPHA,
                   help="prior stabilization weight, 0 < alpha < 1")
    p.add_argument("--T", type=_positive(int), default=models.DEFAULT_T,
                   help="RSBM prior re-estimation rounds")
    p.add_argument("--seed", type=int, default=0, help="seed for every random stream")
    p.add_argument("--relation", choices=datakit.RELATIONS, default=None,
                   help="restrict to one relation (default: all in the manifest)")
    p.add_argument("--form", choices=models.ROLE_FORMS, default=None,
                   help="tri-subject role form (default FM-S/FM-D, i.e. parents vs child)")
    p.add_argument("--max-iter", type=_positive(int), default=500,
                   help="proximal solver iteration cap")
    p.add_argument("--tol", type=_positive(float), default=1e-7,
                   help="proximal solver relative objective tolerance")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="kinverify", formatter_class=fmt,
                                     description="Tri-subject kinship verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", formatter_class=fmt,
                       help="write a synthetic planted-model dataset")
    p.add_argument("--out-dir", required=True)
    _add_cache(p)
    p.add_argument("--relations", nargs="+", choices=datakit.RELATIONS, default=["FM-S"])
    p.add_argument("--d", type=int, default=16, help="feature dimension")
    p.add_argument("--n-pos", type=int, default=200, help="families per relation")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--patch-mode", action="store_true",
                   help="patch-structured features with planted informative patches")
    p.add_argument("--patches", type=int, default=select.N_PATCHES)
    p.add_argument("--per-patch", type=int, default=16)
    p.add_argument("--n-planted", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", formatter_class=fmt,
                       help="compute and cache patch descriptors for a manifest")
    p.add_argument("--manifest", required=True)
    _add_cache(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", formatter_class=fmt, help="fit a model on all families")
    _add_model_flags(p)
    p.add_argument("--output", required=True, help="model file (sidecar: <output>.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=fmt, help="five-fold cross validation")
    _add_model_flags(p)
    p.add_argument("--fold-plan", default=None,
                   help="JSON fold ranges (default: 5 consecutive near-equal folds)")
    p.add_argument("--output", required=True, help="report prefix (.json and .txt)")
    p.add_argument("--roc", default=None, help="write ROC points to this CSV")
    p.add_argument("--jobs", type=_positive(int), default=1, help="folds run in parallel")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", formatter_class=fmt, help="score one family")
    p.add_argument("--model", required=True, help="model file written by train")
    _add_cache(p)
    p.add_argument("--father", help="PGM image or cached feature reference")
    p.add_argument("--mother", help="PGM image or cached feature reference")
    p.add_argument("--child", required=True, help="PGM image or cached feature reference")
    p.add_argument("--mode", choices=("triple", "pair:father", "pair:mother"),
                   default="triple")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (CommandError, ValueError, OSError) as exc:
        print("kinverify %s: error: %s" % (args.command, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
