"""Metrics and the five-fold evaluation protocol."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import models, select
from .datakit import kfold_split
from .optim import SolverConfig

THRESHOLD = 0.5


def accuracy(decisions, labels):
    decisions = np.asarray(decisions).ravel()
    labels = np.asarray(labels).ravel()
    if decisions.shape != labels.shape:
        raise ValueError("decisions and labels differ in length")
    if labels.size == 0:
        raise ValueError("no samples")
    return float(np.mean(decisions == labels))


def roc_auc(scores, labels):
    """ROC points and trapezoidal AUC.

    Thresholds sweep the distinct scores from high to low, a sample counting
    as positive when ``score >= threshold``. Tied scores move both rates at
    once, so the AUC equals the Mann-Whitney statistic with ties counted 1/2.

    Returns
    -------
    points : list of (fpr, tpr)
        Starts at (0, 0) and ends at (1, 1).
    auc : float
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(~pos)[last]
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))
    return [(float(a), float(b)) for a, b in zip(fpr, tpr)], auc


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    auc: float
    roc_points: list = field(repr=False)
    n_test: int = 0
    selection: dict = None
    degenerate_selection: bool = False


@dataclass
class RelationResult:
    relation: str
    folds: list

    @property
    def accuracies(self):
        return np.array([f.accuracy for f in self.folds])

    @property
    def mean(self):
        return float(self.accuracies.mean())

    @property
    def std(self):
        # population convention: divide by the number of folds
        return float(self.accuracies.std(ddof=0))


@dataclass
class ProtocolConfig:
    kind: str = "sbm"
    block_level: bool = False
    feature_selection: bool = False
    lam: float = None
    gamma: float = select.DEFAULT_GAMMA
    alpha: float = models.DEFAULT_ALPHA
    T: int = models.DEFAULT_T
    K: int = select.DEFAULT_K
    seed: int = 0
    form: str = None
    patches: int = select.N_PATCHES
    per_patch: int = select.DESCRIPTOR_DIM
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def effective_lambda(self):
        if self.lam is not None:
            return self.lam
        return models.DEFAULT_BLOCK_LAMBDA if self.block_level else models.DEFAULT_LAMBDA

    @property
    def gmap(self):
        return select.GroupMap(self.patches, self.per_patch)

    @property
    def method_name(self):
        name = {"concat-baseline": "Concatenated+LR"}.get(self.kind, self.kind.upper())
        if self.block_level:
            name += "-block"
        if self.feature_selection:
            name += "-FS"
        return name

    def validate(self):
        if self.kind not in models.MODEL_KINDS:
            raise ValueError("unknown model kind %r" % (self.kind,))
        if self.block_level and self.kind == "concat-baseline":
            raise ValueError("the concatenation baseline has no block-level variant")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1), got %r" % (self.alpha,))
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.effective_lambda > 0 or not self.gamma > 0:
            raise ValueError("lambda and gamma must be positive")
        if (self.block_level or self.feature_selection) and not 1 <= self.K <= self.patches:
            raise ValueError("K must lie in [1, %d]" % self.patches)
        if self.form is not None and self.form not in models.ROLE_FORMS:
            raise ValueError("unknown relation form %r" % (self.form,))

    def to_dict(self):
        doc = asdict(self)
        doc["lam"] = self.effective_lambda
        return doc


@dataclass
class ProtocolReport:
    method: str
    config: dict
    relations: list

    def to_dict(self):
        out = {"method": self.method, "config": self.config, "relations": {}}
        for rel in self.relations:
            out["relations"][rel.relation] = {
                "mean_accuracy": rel.mean,
                "std_accuracy": rel.std,
                "folds": [
                    {"fold": f.fold + 1, "accuracy": f.accuracy, "auc": f.auc,
                     "n_test": f.n_test, "degenerate_selection": f.degenerate_selection,
                     "selection": f.selection}
                    for f in rel.folds
                ],
            }
        if self.relations:
            out["average_accuracy"] = float(np.mean([r.mean for r in self.relations]))
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        names = [r.relation for r in self.relations]
        header = "%-22s" % "Method" + "".join("%14s" % n for n in names) + "%8s" % "Avg"
        cells = ["%14s" % ("%.1f±%.1f" % (100 * r.mean, 100 * r.std)) for r in self.relations]
        avg = 100 * np.mean([r.mean for r in self.relations]) if self.relations else float("nan")
        row = "%-22s" % self.method + "".join(cells) + "%8.1f" % avg
        return "\n".join([header, "-" * len(header), row]) + "\n"

    def write_roc_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["relation", "fold", "fpr", "tpr"])
            for rel in self.relations:
                for f in rel.folds:
                    for fpr, tpr in f.roc_points:
                        w.writerow([rel.relation, f.fold + 1, repr(fpr), repr(tpr)])


def _fit_and_predict(cfg, train, test):
    """Fit on ``train`` only, return (test probabilities, selection, degenerate)."""
    gmap = cfg.gmap
    lam = cfg.effective_lambda
    sel, degenerate = None, False
    if cfg.feature_selection:
        sel = select.fit_selection(train, cfg.gamma, cfg.K, cfg.solver, gmap)
        degenerate = not all(np.any(v) for v in
                             (sel.votes_father, sel.votes_mother, sel.votes_child))
    if cfg.block_level:
        if sel is None:
            every = list(range(gmap.patches))
            sel = select.PatchSelection(gmap.patches, every, every, every,
                                        *(np.zeros(gmap.patches) for _ in range(3)))
        model = models.fit_block_ensemble(cfg.kind, train, sel, lam, cfg.alpha, cfg.T,
                                          cfg.solver, gmap)
        return models.predict(model, test.father, test.mother, test.child), sel, degenerate
    if sel is not None:
        cols = [gmap.columns(sel.for_role(r)) for r in ("father", "mother", "child")]
        train, test = train.select_columns(*cols), test.select_columns(*cols)
    model = models.fit_model(cfg.kind, train, lam, cfg.alpha, cfg.T, cfg.solver)
    return models.predict(model, test.father, test.mother, test.child), sel, degenerate


def evaluate_fold(cfg, fold):
    train, test = fold.train, fold.test
    if cfg.form is not None:
        train = models.permute_roles(train, cfg.form)
        test = models.permute_roles(test, cfg.form)
    probs, sel, degenerate = _fit_and_predict(cfg, train, test)
    decisions = np.where(probs >= THRESHOLD, 1, -1)
    points, auc = roc_auc(probs, test.labels)
    sel_doc = None
    if sel is not None:
        sel_doc = {"father": list(sel.father), "mother": list(sel.mother),
                   "child": list(sel.child)}
    return FoldResult(fold.index, accuracy(decisions, test.labels), auc, points,
                      len(test), sel_doc, degenerate)


def run_protocol(cfg, data, plans, jobs=1):
    """Five-fold cross validation of one method on every relation in ``data``.

    Parameters
    ----------
    cfg : ProtocolConfig
    data : dict
        Relation name -> positive :class:`~kinverify.models.Triples` in
        family order.
    plans : dict or list
        Relation name -> 1-based inclusive fold ranges, or one list used for
        every relation.
    jobs : int
        Folds evaluated concurrently; results do not depend on it.
    """
    cfg.validate()
    for rel, pos in data.items():
        ranges = plans if isinstance(plans, list) else plans.get(rel)
        if ranges is None:
            raise ValueError("no fold plan for relation %s" % rel)
        if (cfg.block_level or cfg.feature_selection) and pos.dim != cfg.gmap.dim:
            raise ValueError("%s features have dimension %d; patch layout needs %d"
                             % (rel, pos.dim, cfg.gmap.dim))
    results = []
    for rel in sorted(data):
        ranges = plans if isinstance(plans, list) else plans[rel]
        folds = kfold_split(data[rel], ranges, seed=cfg.seed)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                fold_results = list(pool.map(lambda f: evaluate_fold(cfg, f), folds))
        else:
            fold_results = [evaluate_fold(cfg, f) for f in folds]
        results.append(RelationResult(rel, fold_results))
    return ProtocolReport(cfg.method_name, cfg.to_dict(), results)
