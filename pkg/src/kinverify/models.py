"""Bilinear kinship verifiers: SBM, ABM, RSBM, block ensembles and a baseline.

All predictors accept either single feature vectors or row-stacked batches
and return probabilities of the positive (kin) class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import SolverConfig, fit_l2_logistic, fit_trace_norm_bilinear, sigmoid
from .select import GroupMap

DEFAULT_LAMBDA = 5.0
DEFAULT_BLOCK_LAMBDA = 0.1
DEFAULT_ALPHA = 0.1
DEFAULT_T = 5
COMBINER_REG = 1e-3
P0 = 0.5

MODEL_KINDS = ("sbm", "abm", "rsbm", "concat-baseline")
ROLE_FORMS = ("FM-S", "FM-D", "FS-M", "MS-F", "FD-M", "MD-F")


@dataclass(frozen=True)
class TripleSample:
    father: np.ndarray
    mother: np.ndarray
    child: np.ndarray
    label: int
    family_id: object = None

    def __post_init__(self):
        if not (self.father.shape == self.mother.shape == self.child.shape):
            raise ValueError("father, mother and child must share one dimension")
        if self.label not in (1, -1):
            raise ValueError("label must be +1 or -1")


@dataclass
class Triples:
    """A batch of labeled (father, mother, child) feature rows."""

    father: np.ndarray
    mother: np.ndarray
    child: np.ndarray
    labels: np.ndarray
    family_ids: list = None

    def __post_init__(self):
        self.father = np.atleast_2d(np.asarray(self.father, dtype=float))
        self.mother = np.atleast_2d(np.asarray(self.mother, dtype=float))
        self.child = np.atleast_2d(np.asarray(self.child, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if not (self.father.shape == self.mother.shape == self.child.shape):
            raise ValueError(
                "member shapes differ: %s, %s, %s"
                % (self.father.shape, self.mother.shape, self.child.shape)
            )
        if self.labels.shape[0] != self.father.shape[0]:
            raise ValueError("label count does not match sample count")
        if not np.all((self.labels == 1) | (self.labels == -1)):
            raise ValueError("labels must be +1 or -1")
        if self.family_ids is None:
            self.family_ids = list(range(len(self.labels)))

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, i):
        return TripleSample(self.father[i], self.mother[i], self.child[i],
                            int(self.labels[i]), self.family_ids[i])

    @property
    def dim(self):
        return self.father.shape[1]

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        return cls(
            np.stack([s.father for s in samples]),
            np.stack([s.mother for s in samples]),
            np.stack([s.child for s in samples]),
            np.array([s.label for s in samples]),
            [s.family_id for s in samples],
        )

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Triples(self.father[idx], self.mother[idx], self.child[idx],
                       self.labels[idx], [self.family_ids[i] for i in idx])

    def concat(self, other):
        return Triples(
            np.vstack([self.father, other.father]),
            np.vstack([self.mother, other.mother]),
            np.vstack([self.child, other.child]),
            np.concatenate([self.labels, other.labels]),
            list(self.family_ids) + list(other.family_ids),
        )

    def select_columns(self, father_cols, mother_cols, child_cols):
        return Triples(self.father[:, father_cols], self.mother[:, mother_cols],
                       self.child[:, child_cols], self.labels, list(self.family_ids))


@dataclass
class PriorPair:
    p_fc: np.ndarray
    p_mc: np.ndarray


@dataclass
class SBMModel:
    W_f: np.ndarray
    W_m: np.ndarray
    beta1: float
    beta2: float
    bias: float
    # (slope, intercept) of the 1-d calibration for pair-only inputs
    calib_father: tuple = (1.0, 0.0)
    calib_mother: tuple = (1.0, 0.0)
    kind = "sbm"


@dataclass
class RSBMModel:
    W_f: np.ndarray
    W_m: np.ndarray
    beta1: float
    beta2: float
    bias: float
    alpha: float
    p0: float = P0
    calib_father: tuple = (1.0, 0.0)
    calib_mother: tuple = (1.0, 0.0)
    history: list = field(default=None, repr=False, compare=False)
    kind = "rsbm"


@dataclass
class ABMModel:
    W_p: np.ndarray
    bias: float
    kind = "abm"

    def __post_init__(self):
        if self.W_p.shape[0] != 2 * self.W_p.shape[1]:
            raise ValueError("W_p must be 2d x d, got %s" % (self.W_p.shape,))


@dataclass
class ConcatModel:
    """Linear logistic baseline on ``[father; mother; child]``."""

    w: np.ndarray
    bias: float
    kind = "concat-baseline"


@dataclass
class BlockEnsemble:
    """One verifier per selected patch position, fused by a logistic combiner."""

    base_kind: str
    father_patches: list
    mother_patches: list
    child_patches: list
    per_patch: int
    models: list
    weights: np.ndarray
    bias: float
    kind = "block"

    def __post_init__(self):
        if len(self.models) != len(self.weights):
            raise ValueError("combiner length must equal the number of patch models")


def bilinear_score(a, W, b):
    """``a^T W b``; row-wise when ``a`` and ``b`` are batches."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    W = np.asarray(W, dtype=float)
    if a.shape[-1] != W.shape[0] or b.shape[-1] != W.shape[1]:
        raise ValueError("dimension mismatch: a %s, W %s, b %s" % (a.shape, W.shape, b.shape))
    if a.ndim == 1 and b.ndim == 1:
        return float(a @ W @ b)
    return np.einsum("ij,ij->i", np.atleast_2d(a) @ W, np.atleast_2d(b))


def compute_priors(s_f, s_m):
    """Softmax over the two parent similarities (shift-stable)."""
    s_f = np.asarray(s_f, dtype=float)
    s_m = np.asarray(s_m, dtype=float)
    top = np.maximum(s_f, s_m)
    e_f = np.exp(s_f - top)
    e_m = np.exp(s_m - top)
    total = e_f + e_m
    return PriorPair(e_f / total, e_m / total)


def stabilize_priors(current, alpha):
    """Pull priors toward 1/2: ``alpha * 0.5 + (1 - alpha) * current``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1], got %r" % (alpha,))
    return PriorPair(alpha * P0 + (1.0 - alpha) * current.p_fc,
                     alpha * P0 + (1.0 - alpha) * current.p_mc)


def _combiner(scores, labels):
    w, b = fit_l2_logistic(np.column_stack(scores), labels, reg=COMBINER_REG)
    return (float(x) for x in (*w, b))


def _calibration(scores, labels):
    w, b = fit_l2_logistic(scores[:, None], labels, reg=COMBINER_REG)
    return (float(w[0]), float(b))


def fit_sbm(triples, lam=DEFAULT_LAMBDA, cfg=None):
    """Father-child and mother-child trace-norm fits, then a 2-input combiner."""
    cfg = cfg or SolverConfig()
    y = triples.labels
    W_f = fit_trace_norm_bilinear(triples.father, triples.child, y, lam, cfg).W
    W_m = fit_trace_norm_bilinear(triples.mother, triples.child, y, lam, cfg).W
    s_f = bilinear_score(triples.father, W_f, triples.child)
    s_m = bilinear_score(triples.mother, W_m, triples.child)
    beta1, beta2, bias = _combiner((s_f, s_m), y)
    return SBMModel(W_f, W_m, beta1, beta2, bias,
                    _calibration(s_f, y), _calibration(s_m, y))


def _rows(*vecs):
    out = [np.atleast_2d(np.asarray(v, dtype=float)) for v in vecs]
    single = all(np.ndim(v) == 1 for v in vecs)
    return out, single


def _finish(p, single):
    return float(p[0]) if single else p


def predict_sbm(model, father, mother, child):
    (f, m, c), single = _rows(father, mother, child)
    s_f = bilinear_score(f, model.W_f, c)
    s_m = bilinear_score(m, model.W_m, c)
    return _finish(sigmoid(model.beta1 * s_f + model.beta2 * s_m + model.bias), single)


def fit_abm(triples, lam=DEFAULT_LAMBDA, cfg=None):
    """One ``2d x d`` trace-norm fit of stacked parents against the child."""
    parents = np.hstack([triples.father, triples.mother])
    fit = fit_trace_norm_bilinear(parents, triples.child, triples.labels, lam, cfg)
    return ABMModel(fit.W, fit.b)


def predict_abm(model, father, mother, child):
    (f, m, c), single = _rows(father, mother, child)
    s = bilinear_score(np.hstack([f, m]), model.W_p, c)
    return _finish(sigmoid(s + model.bias), single)


def _relative_scores(W_f, W_m, f, m, c, alpha):
    s_f = bilinear_score(f, W_f, c)
    s_m = bilinear_score(m, W_m, c)
    pri = stabilize_priors(compute_priors(s_f, s_m), alpha)
    return s_f, s_m, pri


def fit_rsbm(triples, lam=DEFAULT_LAMBDA, alpha=DEFAULT_ALPHA, T=DEFAULT_T, cfg=None):
    """Iteratively re-weighted symmetric model with per-sample parent priors.

    Each round fits both similarity matrices with every parent vector scaled
    by its current prior, recomputes priors from the unscaled similarities
    and pulls them toward 1/2 by ``alpha``. ``model.history`` keeps each
    round's matrices and priors.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1], got %r" % (alpha,))
    cfg = cfg or SolverConfig()
    F, M, C, y = triples.father, triples.mother, triples.child, triples.labels
    pri = PriorPair(np.full(len(y), P0), np.full(len(y), P0))
    history = []
    for _ in range(T):
        W_f = fit_trace_norm_bilinear(pri.p_fc[:, None] * F, C, y, lam, cfg).W
        W_m = fit_trace_norm_bilinear(pri.p_mc[:, None] * M, C, y, lam, cfg).W
        s_f, s_m, pri = _relative_scores(W_f, W_m, F, M, C, alpha)
        history.append({"W_f": W_f, "W_m": W_m, "priors": pri})
    beta1, beta2, bias = _combiner((pri.p_fc * s_f, pri.p_mc * s_m), y)
    return RSBMModel(W_f, W_m, beta1, beta2, bias, alpha, P0,
                     _calibration(s_f, y), _calibration(s_m, y), history)


def predict_rsbm(model, father, mother, child):
    (f, m, c), single = _rows(father, mother, child)
    s_f, s_m, pri = _relative_scores(model.W_f, model.W_m, f, m, c, model.alpha)
    z = model.beta1 * pri.p_fc * s_f + model.beta2 * pri.p_mc * s_m + model.bias
    return _finish(sigmoid(z), single)


def fit_concat_baseline(triples, reg=COMBINER_REG):
    X = np.hstack([triples.father, triples.mother, triples.child])
    w, b = fit_l2_logistic(X, triples.labels, reg=reg)
    return ConcatModel(w, b)


def predict_concat(model, father, mother, child):
    (f, m, c), single = _rows(father, mother, child)
    return _finish(sigmoid(np.hstack([f, m, c]) @ model.w + model.bias), single)


def fit_model(kind, triples, lam=None, alpha=DEFAULT_ALPHA, T=DEFAULT_T, cfg=None):
    lam = DEFAULT_LAMBDA if lam is None else lam
    if kind == "sbm":
        return fit_sbm(triples, lam, cfg)
    if kind == "abm":
        return fit_abm(triples, lam, cfg)
    if kind == "rsbm":
        return fit_rsbm(triples, lam, alpha, T, cfg)
    if kind == "concat-baseline":
        return fit_concat_baseline(triples)
    raise ValueError("unknown model kind %r; expected one of %s" % (kind, MODEL_KINDS))


def _block_slices(ens, f, m, c, i):
    pp = ens.per_patch

    def cols(k):
        return slice(k * pp, (k + 1) * pp)

    return (f[:, cols(ens.father_patches[i])],
            m[:, cols(ens.mother_patches[i])],
            c[:, cols(ens.child_patches[i])])


def fit_block_ensemble(kind, triples, selection, lam=DEFAULT_BLOCK_LAMBDA,
                       alpha=DEFAULT_ALPHA, T=DEFAULT_T, cfg=None, gmap=None):
    """Per-patch verifiers on the selected patches plus a logistic fusion.

    Position ``i`` pairs the i-th selected father, mother and child patch.
    """
    gmap = gmap or GroupMap()
    if selection.k < 1 or not selection.father:
        raise ValueError("selection must contain at least one patch")
    if kind == "concat-baseline":
        raise ValueError("block ensembles need a bilinear model kind")
    if triples.dim != gmap.dim:
        raise ValueError("triples have dimension %d, group map expects %d"
                         % (triples.dim, gmap.dim))
    models, probs = [], []
    for kf, km, kc in zip(selection.father, selection.mother, selection.child):
        part = triples.select_columns(gmap.patch_slice(kf), gmap.patch_slice(km),
                                      gmap.patch_slice(kc))
        model = fit_model(kind, part, lam, alpha, T, cfg)
        models.append(model)
        probs.append(predict(model, part.father, part.mother, part.child))
    w, b = fit_l2_logistic(np.column_stack(probs), triples.labels, reg=COMBINER_REG)
    return BlockEnsemble(kind, list(selection.father), list(selection.mother),
                         list(selection.child), gmap.per_patch, models, w, b)


def predict_block(ens, father, mother, child):
    (f, m, c), single = _rows(father, mother, child)
    probs = np.column_stack([
        predict(model, *_block_slices(ens, f, m, c, i))
        for i, model in enumerate(ens.models)
    ])
    return _finish(sigmoid(probs @ ens.weights + ens.bias), single)


_PREDICTORS = {
    "sbm": predict_sbm,
    "abm": predict_abm,
    "rsbm": predict_rsbm,
    "concat-baseline": predict_concat,
    "block": predict_block,
}


def predict(model, father, mother, child):
    """Dispatch on ``model.kind``; returns ``p(kin | father, mother, child)``."""
    return _PREDICTORS[model.kind](model, father, mother, child)


def predict_pair(model, parent, child, role):
    """Bi-subject probability using only one parent's similarity matrix."""
    if role not in ("father", "mother"):
        raise ValueError("role must be 'father' or 'mother', got %r" % (role,))
    if not isinstance(model, (SBMModel, RSBMModel)):
        raise TypeError("pair prediction needs an SBM or RSBM model")
    W = model.W_f if role == "father" else model.W_m
    slope, intercept = model.calib_father if role == "father" else model.calib_mother
    (p, c), single = _rows(parent, child)
    return _finish(sigmoid(slope * bilinear_score(p, W, c) + intercept), single)


def permute_roles(triples, form):
    """Reassign members so ``form``'s pair side fills the parent slots.

    The member that is not moved keeps its slot, so every form is an
    involution: e.g. FS-M swaps mother and child, MS-F swaps father and child.
    """
    if form in ("FM-S", "FM-D"):
        return triples
    if form in ("FS-M", "FD-M"):
        return Triples(triples.father, triples.child, triples.mother,
                       triples.labels, list(triples.family_ids))
    if form in ("MS-F", "MD-F"):
        return Triples(triples.child, triples.mother, triples.father,
                       triples.labels, list(triples.family_ids))
    raise ValueError("unknown relation form %r; expected one of %s" % (form, ROLE_FORMS))
