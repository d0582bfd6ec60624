import itertools
import json
import math
import time

import numpy as np
import pytest

from kinverify.datakit import (
    TSKINFACE_PLAN,
    FeatureStore,
    check_plan,
    derangement,
    even_plan,
    generate_negatives,
    kfold_split,
    load_fold_plan,
    load_manifest,
    substream,
    synth_generate,
    synth_patch_generate,
)
from kinverify.evalkit import roc_auc
from kinverify.models import Triples


def positives(n, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return Triples(*rng.standard_normal((3, n, d)), np.ones(n, dtype=int),
                   ["f%d" % i for i in range(n)])


def all_derangements(n):
    return {p for p in itertools.permutations(range(n)) if all(p[i] != i for i in range(n))}


def subfactorial(n):
    return round(math.factorial(n) / math.e)


# -- manifests ---------------------------------------------------------------

def _write(tmp_path, lines):
    path = tmp_path / "m.jsonl"
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    return path


def test_manifest_parsing(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert load_manifest(empty) == []
    rows = [{"family_id": i, "relation": "FM-S" if i < 3 else "FM-D",
             "father": "f%d.pgm" % i, "mother": "m%d.pgm" % i, "child": "c%d.pgm" % i}
            for i in range(5)]
    recs = load_manifest(_write(tmp_path, rows))
    assert [r.family_id for r in recs] == ["0", "1", "2", "3", "4"]
    assert recs[3].relation == "FM-D" and recs[0].fold is None


@pytest.mark.parametrize("row,needle", [
    ({"family_id": "a", "relation": "FM-S", "father": "f", "mother": "m"}, "child"),
    ({"family_id": "a", "relation": "FM-X", "father": "f", "mother": "m", "child": "c"},
     "relation"),
])
def test_manifest_errors(tmp_path, row, needle):
    with pytest.raises(ValueError, match=needle):
        load_manifest(_write(tmp_path, [row]))


def test_manifest_duplicate_id_is_named(tmp_path):
    row = {"family_id": "fam-17", "relation": "FM-D", "father": "f", "mother": "m", "child": "c"}
    with pytest.raises(ValueError, match="fam-17"):
        load_manifest(_write(tmp_path, [row, row]))


def test_tskinface_sized_manifest(tmp_path):
    rows = [{"family_id": "S%d" % i, "relation": "FM-S", "father": "a", "mother": "b",
             "child": "c"} for i in range(513)]
    rows += [{"family_id": "D%d" % i, "relation": "FM-D", "father": "a", "mother": "b",
              "child": "c"} for i in range(502)]
    recs = load_manifest(_write(tmp_path, rows))
    assert len(recs) == 1015
    assert sum(r.relation == "FM-S" for r in recs) == 513


# -- negatives ---------------------------------------------------------------

def test_two_families_swap():
    neg = generate_negatives(positives(2), seed=1)
    assert neg.family_ids == [("f0", "f1"), ("f1", "f0")]
    assert np.all(neg.labels == -1)
    with pytest.raises(ValueError):
        generate_negatives(positives(1), seed=1)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_derangements_exhaustive(n):
    valid = all_derangements(n)
    assert len(valid) == subfactorial(n)
    seen = set()
    for seed in range(60 * len(valid)):
        perm = tuple(int(x) for x in derangement(n, substream(seed, "t")))
        assert perm in valid
        seen.add(perm)
    assert seen == valid


def test_negatives_seeded():
    pos = positives(4)
    a = generate_negatives(pos, seed=3)
    b = generate_negatives(pos, seed=3)
    assert a.family_ids == b.family_ids
    # distinct seeds agree only at the 1/!n collision rate
    draws = [tuple(generate_negatives(pos, seed=s).family_ids) for s in range(900)]
    same = np.mean([x == y for x, y in zip(draws[::2], draws[1::2])])
    assert same < 3 / subfactorial(4)


def test_negatives_invariants_large():
    pos = positives(500)
    neg = generate_negatives(pos, seed=12)
    couples = [c for c, _ in neg.family_ids]
    children = [k for _, k in neg.family_ids]
    assert len(neg) == len(pos)
    assert all(c != k for c, k in neg.family_ids)
    assert sorted(couples) == sorted(pos.family_ids) == sorted(children)
    np.testing.assert_array_equal(np.sort(neg.child, axis=0), np.sort(pos.child, axis=0))


# -- folds -------------------------------------------------------------------

def test_tskinface_plan_matches_even_split():
    assert even_plan(502) == TSKINFACE_PLAN["FM-D"]
    assert even_plan(513) == TSKINFACE_PLAN["FM-S"]
    assert TSKINFACE_PLAN["FM-D"][0] == (1, 100)
    assert TSKINFACE_PLAN["FM-S"][4] == (409, 513)
    sizes = [b - a + 1 for a, b in TSKINFACE_PLAN["FM-D"]]
    assert sizes == [100, 100, 100, 100, 102]


def test_plan_validation():
    check_plan(even_plan(20), 20)
    with pytest.raises(ValueError, match="overlap"):
        check_plan([(1, 5), (5, 10)], 10)
    with pytest.raises(ValueError, match="cover"):
        check_plan([(1, 4), (6, 10)], 10)


def test_fold_plan_file(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(json.dumps([[1, 3], [4, 6], [7, 9], [10, 12], [13, 15]]))
    assert load_fold_plan(path)[1] == (4, 6)
    path.write_text(json.dumps({"FM-D": TSKINFACE_PLAN["FM-D"]}))
    assert load_fold_plan(path)["FM-D"][4] == (401, 502)


def test_kfold_split_partitions():
    pos = positives(23)
    folds = kfold_split(pos, even_plan(23), seed=4)
    assert len(folds) == 5
    tests = np.concatenate([f.test_idx for f in folds])
    assert sorted(tests) == list(range(23))
    for f in folds:
        assert not set(f.train_idx) & set(f.test_idx)
        train_ids = {pos.family_ids[i] for i in f.train_idx}
        test_ids = {pos.family_ids[i] for i in f.test_idx}
        for side, ids in ((f.train, train_ids), (f.test, test_ids)):
            assert np.sum(side.labels == 1) == np.sum(side.labels == -1)
            for fid in side.family_ids:
                members = fid if isinstance(fid, tuple) else (fid,)
                assert set(members) <= ids
    again = kfold_split(pos, even_plan(23), seed=4)
    assert all(a.train.family_ids == b.train.family_ids for a, b in zip(folds, again))


# -- feature store -----------------------------------------------------------

def test_feature_store_roundtrip(tmp_path, rng):
    store = FeatureStore(tmp_path)
    x = rng.standard_normal((49, 128)).astype(np.float32)
    path = store.write("faces/a.pgm", x)
    assert store.read("faces/a.pgm").tobytes() == x.tobytes()
    assert store.read("faces/missing.pgm") is None
    assert FeatureStore(tmp_path, version=99).read("faces/a.pgm") is None
    blob = path.read_bytes()
    assert blob[:4] == b"KINF" and len(blob) == 4 + 2 + 4 + 4 + 4 * 49 * 128
    first = blob
    store.write("faces/a.pgm", x)
    assert path.read_bytes() == first


def test_feature_store_corruption(tmp_path):
    store = FeatureStore(tmp_path)
    path = store.write("k", np.ones((2, 3), dtype=np.float32))
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ValueError, match="magic"):
        store.read("k")
    path.write_bytes(b"KI")
    with pytest.raises(ValueError):
        store.read("k")


# -- synthetic generator -----------------------------------------------------

def test_synth_noise_free_is_separable():
    sd = synth_generate(d=16, n_pos=300, rank=3, noise_sigma=0.0, seed=2)
    t = sd.triples
    _, auc = roc_auc(sd.planted_scores(t.father, t.mother, t.child), t.labels)
    assert auc == 1.0
    assert np.linalg.matrix_rank(sd.W_f) == 3 and sd.W_p.shape == (32, 16)


def test_synth_deterministic_and_fast():
    start = time.perf_counter()
    a = synth_generate(d=16, n_pos=1000, rank=3, seed=5)
    assert time.perf_counter() - start < 1.0
    b = synth_generate(d=16, n_pos=1000, rank=3, seed=5)
    assert a.triples.child.tobytes() == b.triples.child.tobytes()
    assert a.triples.family_ids == b.triples.family_ids
    c = synth_generate(d=16, n_pos=1000, rank=3, seed=6)
    assert a.triples.child.tobytes() != c.triples.child.tobytes()


def test_synth_resemblance_and_validation():
    sd = synth_generate(d=8, n_pos=50, rank=2, seed=1, resemblance=(0.8, 0.2))
    assert sd.resembles_father.dtype == bool and 0 < sd.resembles_father.sum() < 50
    for kw in (dict(d=4, rank=3), dict(rank=0), dict(n_pos=1), dict(noise_sigma=-1)):
        with pytest.raises(ValueError):
            synth_generate(**kw)


def test_synth_patch_layout():
    sd = synth_patch_generate(n_pos=20, patches=49, per_patch=4, n_planted=10, seed=0)
    assert sd.triples.dim == 196 and len(sd.triples) == 40
    assert all(len(v) == 10 for v in sd.planted.values())
