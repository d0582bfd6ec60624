import math

import numpy as np
import pytest

from kinverify.datakit import synth_patch_generate
from kinverify.models import (
    ABMModel,
    PriorPair,
    RSBMModel,
    SBMModel,
    TripleSample,
    Triples,
    bilinear_score,
    compute_priors,
    fit_abm,
    fit_block_ensemble,
    fit_model,
    fit_rsbm,
    fit_sbm,
    permute_roles,
    predict,
    predict_abm,
    predict_pair,
    predict_rsbm,
    predict_sbm,
    stabilize_priors,
)
from kinverify.optim import SolverConfig
from kinverify.select import GroupMap, PatchSelection


# -- naive oracles -----------------------------------------------------------

def naive_bilinear(a, W, b):
    total = 0.0
    for i in range(len(a)):
        for j in range(len(b)):
            total += a[i] * W[i][j] * b[j]
    return total


def naive_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def naive_sbm(model, f, m, c):
    s_f = naive_bilinear(f, model.W_f, c)
    s_m = naive_bilinear(m, model.W_m, c)
    return naive_sigmoid(model.beta1 * s_f + model.beta2 * s_m + model.bias)


def naive_abm(model, f, m, c):
    return naive_sigmoid(naive_bilinear(list(f) + list(m), model.W_p, c) + model.bias)


def naive_rsbm(model, f, m, c):
    s_f = naive_bilinear(f, model.W_f, c)
    s_m = naive_bilinear(m, model.W_m, c)
    raw_fc = math.exp(s_f) / (math.exp(s_f) + math.exp(s_m))
    raw_mc = math.exp(s_m) / (math.exp(s_f) + math.exp(s_m))
    p_fc = model.alpha * 0.5 + (1 - model.alpha) * raw_fc
    p_mc = model.alpha * 0.5 + (1 - model.alpha) * raw_mc
    return naive_sigmoid(model.beta1 * p_fc * s_f + model.beta2 * p_mc * s_m + model.bias)


def random_model(rng, kind, d=4):
    if kind == "abm":
        return ABMModel(0.5 * rng.standard_normal((2 * d, d)), rng.standard_normal())
    W_f, W_m = 0.5 * rng.standard_normal((2, d, d))
    b1, b2, b = rng.standard_normal(3)
    if kind == "sbm":
        return SBMModel(W_f, W_m, b1, b2, b)
    return RSBMModel(W_f, W_m, b1, b2, b, alpha=rng.uniform(0.05, 0.95))


# -- scores and priors -------------------------------------------------------

def test_bilinear_score_examples(rng):
    a, b = rng.standard_normal((2, 3))
    assert bilinear_score(a, np.zeros((3, 3)), b) == 0.0
    assert bilinear_score(a, np.eye(3), b) == pytest.approx(a @ b, abs=1e-15)
    W = rng.standard_normal((3, 3))
    assert abs(bilinear_score(a, W, b) - naive_bilinear(a, W, b)) <= 1e-12
    with pytest.raises(ValueError):
        bilinear_score(a, np.zeros((2, 3)), b)


def test_compute_priors_examples():
    p = compute_priors(1.3, 1.3)
    assert (p.p_fc, p.p_mc) == (0.5, 0.5)
    p = compute_priors(math.log(3.0), 0.0)
    assert p.p_fc == pytest.approx(0.75, abs=1e-15)
    assert p.p_fc + p.p_mc == pytest.approx(1.0, abs=1e-12)


def test_compute_priors_shift_invariance(rng):
    s_f, s_m = rng.standard_normal((2, 1000)) * 5
    base = compute_priors(s_f, s_m)
    # dyadic shifts keep the shifted differences exact, so outputs are bitwise equal
    for c in (0.5, 8.0, -2.0):
        sf = np.round(s_f * 1024) / 1024
        sm = np.round(s_m * 1024) / 1024
        a, b = compute_priors(sf, sm), compute_priors(sf + c, sm + c)
        assert a.p_fc.tobytes() == b.p_fc.tobytes()
        assert a.p_mc.tobytes() == b.p_mc.tobytes()
    shifted = compute_priors(s_f + 123.456, s_m + 123.456)
    np.testing.assert_allclose(shifted.p_fc, base.p_fc, atol=1e-12)
    np.testing.assert_allclose(base.p_fc + base.p_mc, 1.0, atol=1e-12)


def test_stabilize_priors_examples(rng):
    p = stabilize_priors(PriorPair(1.0, 0.0), 0.1)
    assert p.p_fc == pytest.approx(0.95, abs=1e-15)
    assert p.p_mc == pytest.approx(0.05, abs=1e-15)
    cur = compute_priors(*rng.standard_normal((2, 50)))
    one = stabilize_priors(cur, 1.0)
    assert np.all(one.p_fc == 0.5) and np.all(one.p_mc == 0.5)
    mid = stabilize_priors(cur, 0.3)
    np.testing.assert_allclose(mid.p_fc + mid.p_mc, 1.0, atol=1e-12)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            stabilize_priors(cur, bad)


# -- predictors vs naive oracles ---------------------------------------------

@pytest.mark.parametrize("kind,oracle,fn", [
    ("sbm", naive_sbm, predict_sbm),
    ("abm", naive_abm, predict_abm),
    ("rsbm", naive_rsbm, predict_rsbm),
])
def test_predictors_match_naive_oracle(kind, oracle, fn):
    rng = np.random.default_rng(99)
    for _ in range(100):
        model = random_model(rng, kind)
        f, m, c = rng.standard_normal((3, 4))
        p = fn(model, f, m, c)
        assert 0.0 < p < 1.0
        assert abs(p - oracle(model, f, m, c)) <= 1e-12
        assert predict(model, f, m, c) == p


def test_batch_prediction_matches_single(rng):
    model = random_model(rng, "rsbm")
    F, M, C = rng.standard_normal((3, 10, 4))
    batch = predict(model, F, M, C)
    assert batch.shape == (10,)
    for i in range(10):
        assert batch[i] == pytest.approx(predict(model, F[i], M[i], C[i]), abs=1e-15)


def test_zero_models_predict_half(rng):
    f, m, c = rng.standard_normal((3, 4))
    z = np.zeros((4, 4))
    assert predict_sbm(SBMModel(z, z, 1.0, 1.0, 0.0), f, m, c) == 0.5
    assert predict_abm(ABMModel(np.zeros((8, 4)), 0.0), f, m, c) == 0.5
    assert predict_rsbm(RSBMModel(z, z, 1.0, 1.0, 0.7, 0.1), f, m, c) == naive_sigmoid(0.7)


def test_sbm_monotone_in_father_score(rng):
    W_m = rng.standard_normal((4, 4))
    f, m, c = rng.standard_normal((3, 4))
    model = SBMModel(np.eye(4), W_m, 0.8, 0.3, -0.2)
    outs = [predict_sbm(model, t * c, m, c) for t in (0.0, 0.5, 1.0, 2.0)]
    assert all(a < b for a, b in zip(outs, outs[1:]))


def test_rsbm_equal_scores_halve_sbm(rng):
    W = rng.standard_normal((4, 4))
    f, c = rng.standard_normal((2, 4))
    rs = RSBMModel(W, W, 1.2, 0.7, -0.3, 0.1)
    sb = SBMModel(0.5 * W, 0.5 * W, 1.2, 0.7, -0.3)
    assert predict_rsbm(rs, f, f, c) == pytest.approx(predict_sbm(sb, f, f, c), abs=1e-15)


def test_abm_shape_and_parameter_count():
    assert ABMModel(np.zeros((800, 400)), 0.0).W_p.size == 2 * 400 * 400
    with pytest.raises(ValueError):
        ABMModel(np.zeros((4, 4)), 0.0)


# -- fitting -----------------------------------------------------------------

def test_huge_lambda_degenerates_to_base_rate(small_triples):
    t = small_triples.subset(np.r_[0:120, 120:170])  # 120 positives, 50 negatives
    cfg = SolverConfig(max_iterations=5000, tolerance=1e-14)
    logit = math.log(120 / 50)
    sbm = fit_sbm(t, 1e6, cfg)
    assert not sbm.W_f.any() and not sbm.W_m.any()
    assert sbm.bias == pytest.approx(logit, abs=1e-6)
    abm = fit_abm(t, 1e6, cfg)
    assert not abm.W_p.any()
    assert abm.bias == pytest.approx(logit, abs=1e-6)


def test_sbm_and_abm_recover_planted_model(planted_fold):
    from kinverify.evalkit import roc_auc

    test = planted_fold.test
    sbm = fit_sbm(planted_fold.train)
    p = predict(sbm, test.father, test.mother, test.child)
    assert np.mean((p >= 0.5) == (test.labels > 0)) >= 0.9
    abm = fit_abm(planted_fold.train)
    assert roc_auc(predict(abm, test.father, test.mother, test.child), test.labels)[1] >= 0.95


def test_rsbm_alpha_one_freezes_priors(small_triples):
    model = fit_rsbm(small_triples, lam=1.0, alpha=1.0, T=3)
    assert len(model.history) == 3
    first = model.history[0]
    for h in model.history:
        assert np.all(h["priors"].p_fc == 0.5) and np.all(h["priors"].p_mc == 0.5)
        np.testing.assert_allclose(h["W_f"], first["W_f"], atol=1e-10)
        np.testing.assert_allclose(h["W_m"], first["W_m"], atol=1e-10)


def test_rsbm_priors_sum_to_one(small_triples):
    model = fit_rsbm(small_triples, lam=1.0, alpha=0.1, T=2)
    for h in model.history:
        np.testing.assert_allclose(h["priors"].p_fc + h["priors"].p_mc, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        fit_rsbm(small_triples, T=0)


def test_child_scaling_keeps_sbm_decisions(small_triples):
    t = small_triples
    base = fit_sbm(t, 1.0)
    scaled = Triples(t.father, t.mother, 3.0 * t.child, t.labels)
    # same matrices, refit combiner on the scaled scores
    s_f = bilinear_score(scaled.father, base.W_f, scaled.child)
    s_m = bilinear_score(scaled.mother, base.W_m, scaled.child)
    np.testing.assert_allclose(s_f, 3 * bilinear_score(t.father, base.W_f, t.child), rtol=1e-12)
    from kinverify.optim import fit_l2_logistic
    w, b = fit_l2_logistic(np.column_stack([s_f, s_m]), t.labels, reg=0.0)
    w0, b0 = fit_l2_logistic(np.column_stack([s_f / 3, s_m / 3]), t.labels, reg=0.0)
    d_scaled = np.column_stack([s_f, s_m]) @ w + b >= 0
    d_base = np.column_stack([s_f / 3, s_m / 3]) @ w0 + b0 >= 0
    assert np.mean(d_scaled == d_base) >= 0.99


def test_pair_prediction_ignores_other_parent(small_triples, rng):
    model = fit_sbm(small_triples, 1.0)
    f, c = small_triples.father[0], small_triples.child[0]
    p = predict_pair(model, f, c, "father")
    assert 0 < p < 1
    # the other parent never enters; same answer whatever it is
    assert predict_pair(model, f, c, "father") == p
    with pytest.raises(ValueError):
        predict_pair(model, f, c, "sibling")
    with pytest.raises(TypeError):
        predict_pair(fit_abm(small_triples, 1.0), f, c, "father")


def test_pair_calibration_zero_matrix_balanced():
    rng = np.random.default_rng(0)
    t = Triples(*rng.standard_normal((3, 40, 3)), np.tile([1, -1], 20))
    model = fit_sbm(t, 1e6, SolverConfig(max_iterations=2000, tolerance=1e-14))
    assert predict_pair(model, t.father[0], t.child[0], "mother") == pytest.approx(0.5, abs=1e-9)


def test_concat_baseline_fits(small_triples):
    model = fit_model("concat-baseline", small_triples)
    p = predict(model, small_triples.father, small_triples.mother, small_triples.child)
    assert p.shape == (len(small_triples),) and np.all((p > 0) & (p < 1))
    with pytest.raises(ValueError):
        fit_model("lmnn", small_triples)


def _patch_data():
    sd = synth_patch_generate(n_pos=150, patches=6, per_patch=4, n_planted=3, seed=5)
    return sd, GroupMap(6, 4)


def test_block_ensemble_single_patch_is_monotone():
    sd, g = _patch_data()
    sel = PatchSelection(1, [sd.planted["father"][0]], [sd.planted["mother"][0]],
                         [sd.planted["child"][0]], *np.zeros((3, 6)))
    ens = fit_block_ensemble("sbm", sd.triples, sel, gmap=g)
    t = sd.triples
    inner = predict(ens.models[0], t.father[:, g.patch_slice(sel.father[0])],
                    t.mother[:, g.patch_slice(sel.mother[0])],
                    t.child[:, g.patch_slice(sel.child[0])])
    outer = predict(ens, t.father, t.mother, t.child)
    order = np.argsort(inner)
    assert np.all(np.diff(outer[order]) * np.sign(ens.weights[0]) >= -1e-15)


@pytest.mark.parametrize("kind", ["sbm", "abm", "rsbm"])
def test_block_ensemble_kinds(kind):
    sd, g = _patch_data()
    sel = PatchSelection(3, sd.planted["father"], sd.planted["mother"], sd.planted["child"],
                         *np.zeros((3, 6)))
    ens = fit_block_ensemble(kind, sd.triples, sel, T=2, gmap=g)
    assert len(ens.models) == 3 and len(ens.weights) == 3
    p = predict(ens, sd.triples.father, sd.triples.mother, sd.triples.child)
    assert np.mean((p >= 0.5) == (sd.triples.labels > 0)) > 0.8
    with pytest.raises(ValueError):
        fit_block_ensemble(kind, sd.triples, PatchSelection(0, [], [], [], *np.zeros((3, 6))),
                           gmap=g)


def test_permute_roles(small_triples):
    t = small_triples
    assert permute_roles(t, "FM-S") is t
    fsm = permute_roles(t, "FS-M")
    np.testing.assert_array_equal(fsm.mother, t.child)
    np.testing.assert_array_equal(fsm.child, t.mother)
    msf = permute_roles(t, "MS-F")
    np.testing.assert_array_equal(msf.father, t.child)
    np.testing.assert_array_equal(msf.child, t.father)
    for form in ("FS-M", "MS-F", "FD-M", "MD-F"):
        back = permute_roles(permute_roles(t, form), form)
        for a, b in ((back.father, t.father), (back.mother, t.mother), (back.child, t.child)):
            np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        permute_roles(t, "FF-M")


def test_triple_sample_validation():
    with pytest.raises(ValueError):
        TripleSample(np.zeros(3), np.zeros(3), np.zeros(4), 1)
    with pytest.raises(ValueError):
        TripleSample(np.zeros(3), np.zeros(3), np.zeros(3), 0)
    s = TripleSample(np.zeros(3), np.ones(3), np.zeros(3), -1, "fam")
    t = Triples.from_samples([s, s])
    assert len(t) == 2 and t[1].family_id == "fam"
