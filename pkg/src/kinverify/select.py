"""Spatially voted patch selection.

An L1 logistic fit over concatenated ``[parent; child]`` vectors scores
every feature; each patch then collects the absolute weights of its own
features and the top-K patches per role are kept.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .facefeat import DESCRIPTOR_DIM, N_PATCHES
from .optim import fit_l1_logistic

DEFAULT_GAMMA = 0.08
DEFAULT_K = 25


class DegenerateSelectionWarning(UserWarning):
    """All votes of a role are zero; selection fell back to the lowest indices."""


@dataclass(frozen=True)
class GroupMap:
    """Feature index -> patch index for a face vector of ``patches * per_patch``."""

    patches: int = N_PATCHES
    per_patch: int = DESCRIPTOR_DIM

    @property
    def dim(self):
        return self.patches * self.per_patch

    @property
    def patch_of_feature(self):
        return np.repeat(np.arange(self.patches), self.per_patch)

    def patch_slice(self, k):
        return slice(k * self.per_patch, (k + 1) * self.per_patch)

    def columns(self, patch_ids):
        """Feature columns of the given patches, in patch order."""
        ids = np.asarray(patch_ids, dtype=int)
        return (ids[:, None] * self.per_patch + np.arange(self.per_patch)).ravel()


@dataclass
class PatchSelection:
    k: int
    father: list
    mother: list
    child: list
    votes_father: np.ndarray
    votes_mother: np.ndarray
    votes_child: np.ndarray

    def for_role(self, role):
        return {"father": self.father, "mother": self.mother, "child": self.child}[role]

    def to_json(self):
        doc = {
            "k": self.k,
            "father": list(self.father),
            "mother": list(self.mother),
            "child": list(self.child),
            "votes": {
                "father": [float(v) for v in self.votes_father],
                "mother": [float(v) for v in self.votes_mother],
                "child": [float(v) for v in self.votes_child],
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        votes = doc.get("votes", {})
        n = 1 + max(doc["father"] + doc["mother"] + doc["child"])

        def v(role):
            return np.asarray(votes.get(role, np.zeros(n)), dtype=float)

        return cls(int(doc["k"]), list(doc["father"]), list(doc["mother"]),
                   list(doc["child"]), v("father"), v("mother"), v("child"))


def fit_pair_weights(parent_feats, child_feats, labels, gamma=DEFAULT_GAMMA, cfg=None):
    """L1 logistic weights over ``[parent; child]``; first half scores the parent."""
    P = np.atleast_2d(np.asarray(parent_feats, dtype=float))
    C = np.atleast_2d(np.asarray(child_feats, dtype=float))
    if P.shape != C.shape:
        raise ValueError("parent features %s and child features %s differ in shape"
                         % (P.shape, C.shape))
    return fit_l1_logistic(np.hstack([P, C]), labels, gamma, cfg).u


def _patch_sums(w, gmap):
    return np.abs(w).reshape(gmap.patches, gmap.per_patch).sum(axis=1)


def vote_patches(u_f, u_m, gmap=None):
    """Per-patch votes for father, mother and child.

    Each patch receives the summed ``|u_j|`` of its features; child patches
    collect from the second halves of both pair fits.
    """
    gmap = gmap or GroupMap()
    u_f = np.asarray(u_f, dtype=float)
    u_m = np.asarray(u_m, dtype=float)
    for name, u in (("u_f", u_f), ("u_m", u_m)):
        if u.shape != (2 * gmap.dim,):
            raise ValueError("%s has length %d, expected %d" % (name, u.size, 2 * gmap.dim))
    d = gmap.dim
    return (
        _patch_sums(u_f[:d], gmap),
        _patch_sums(u_m[:d], gmap),
        _patch_sums(u_f[d:], gmap) + _patch_sums(u_m[d:], gmap),
    )


def select_top_k(votes, k):
    """Indices of the ``k`` largest votes, ties to the lower index, ascending."""
    votes = np.asarray(votes, dtype=float)
    if not 1 <= k <= votes.size:
        raise ValueError("K must lie in [1, %d], got %r" % (votes.size, k))
    order = np.lexsort((np.arange(votes.size), -votes))
    return sorted(int(i) for i in order[:k])


def fit_selection(triples, gamma=DEFAULT_GAMMA, k=DEFAULT_K, cfg=None, gmap=None):
    """Select ``k`` patches per role from labeled triples with full features.

    ``triples`` is a :class:`kinverify.models.Triples`.
    """
    gmap = gmap or GroupMap()
    if triples.dim != gmap.dim:
        raise ValueError("triples have dimension %d, group map expects %d"
                         % (triples.dim, gmap.dim))
    u_f = fit_pair_weights(triples.father, triples.child, triples.labels, gamma, cfg)
    u_m = fit_pair_weights(triples.mother, triples.child, triples.labels, gamma, cfg)
    votes = vote_patches(u_f, u_m, gmap)
    for role, v in zip(("father", "mother", "child"), votes):
        if not np.any(v):
            warnings.warn("all %s votes are zero; falling back to patches 0..%d"
                          % (role, k - 1), DegenerateSelectionWarning, stacklevel=2)
    picks = [select_top_k(v, k) for v in votes]
    return PatchSelection(k, *picks, *votes)
