"""Datasets: manifests, negative sampling, fold plans, feature cache, synthetic data."""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .facefeat import DESCRIPTOR_VERSION
from .models import Triples

RELATIONS = ("FM-S", "FM-D")
N_FOLDS = 5

# 1-based inclusive family ranges of the five TSKinFace folds.
TSKINFACE_PLAN = {
    "FM-D": [(1, 100), (101, 200), (201, 300), (301, 400), (401, 502)],
    "FM-S": [(1, 102), (103, 204), (205, 306), (307, 408), (409, 513)],
}


def substream(seed, name, *extra):
    """Independent generator for a named consumer of the run seed."""
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32, zlib.crc32(name.encode())]
    words += [int(x) for x in extra]
    return np.random.default_rng(np.random.SeedSequence(words))


# -- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class FamilyRecord:
    family_id: str
    relation: str
    father: str
    mother: str
    child: str
    fold: int = None


def load_manifest(path):
    """Read a JSON-lines manifest of ``{family_id, relation, father, mother, child, fold?}``."""
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError("%s:%d: invalid JSON (%s)" % (path, lineno, exc)) from None
            fid = doc.get("family_id")
            if fid is None:
                raise ValueError("%s:%d: missing family_id" % (path, lineno))
            fid = str(fid)
            for member in ("father", "mother", "child"):
                if not doc.get(member):
                    raise ValueError("%s:%d: family %s is missing its %s"
                                     % (path, lineno, fid, member))
            if doc.get("relation") not in RELATIONS:
                raise ValueError("%s:%d: family %s has unknown relation %r"
                                 % (path, lineno, fid, doc.get("relation")))
            if fid in seen:
                raise ValueError("%s:%d: duplicate family_id %s" % (path, lineno, fid))
            seen.add(fid)
            fold = doc.get("fold")
            records.append(FamilyRecord(fid, doc["relation"], str(doc["father"]),
                                        str(doc["mother"]), str(doc["child"]),
                                        None if fold is None else int(fold)))
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = {"family_id": r.family_id, "relation": r.relation,
                   "father": r.father, "mother": r.mother, "child": r.child}
            if r.fold is not None:
                doc["fold"] = r.fold
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


# -- negatives ---------------------------------------------------------------

def derangement(n, rng):
    """Uniformly random permutation of ``range(n)`` without fixed points."""
    if n < 2:
        raise ValueError("a derangement needs at least 2 elements, got %d" % n)
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def generate_negatives(positives, seed):
    """Pair every couple with another family's child, each child used once.

    Returns negative :class:`Triples` whose ``family_ids`` are
    ``(couple_family, child_family)`` tuples.
    """
    n = len(positives)
    if n < 2:
        raise ValueError("need at least 2 families to build negatives, got %d" % n)
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "negatives")
    perm = derangement(n, rng)
    ids = list(positives.family_ids)
    return Triples(positives.father, positives.mother, positives.child[perm],
                   -np.ones(n, dtype=int), [(ids[i], ids[j]) for i, j in enumerate(perm)])


# -- folds -------------------------------------------------------------------

def even_plan(n, k=N_FOLDS):
    """``k`` consecutive ranges of ``n // k`` families, remainder in the last."""
    if n < k:
        raise ValueError("cannot split %d families into %d folds" % (n, k))
    base = n // k
    ranges = [(i * base + 1, (i + 1) * base) for i in range(k - 1)]
    return ranges + [((k - 1) * base + 1, n)]


def check_plan(ranges, n):
    """Validate that 1-based inclusive ``ranges`` partition ``1..n``."""
    covered = np.zeros(n + 1, dtype=int)
    for start, end in ranges:
        if not 1 <= start <= end <= n:
            raise ValueError("fold range [%d, %d] outside 1..%d" % (start, end, n))
        covered[start:end + 1] += 1
    if np.any(covered[1:] > 1):
        raise ValueError("fold ranges overlap")
    if np.any(covered[1:] == 0):
        raise ValueError("fold ranges do not cover all %d families" % n)
    return [(int(a), int(b)) for a, b in ranges]


def load_fold_plan(path):
    """A JSON array of ``[start, end]`` pairs, or an object keyed by relation."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, list):
        return [tuple(r) for r in doc]
    return {rel: [tuple(r) for r in ranges] for rel, ranges in doc.items()}


@dataclass
class Fold:
    index: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    train: Triples
    test: Triples


def kfold_split(positives, plan, seed=0):
    """Five (train, test) partitions; negatives drawn inside each side.

    ``positives`` are the positive triples in family order and ``plan`` the
    1-based inclusive fold ranges over that order.
    """
    n = len(positives)
    plan = check_plan(plan, n)
    folds = []
    for i, (start, end) in enumerate(plan):
        test_idx = np.arange(start - 1, end)
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        sides = []
        for side, idx in (("train", train_idx), ("test", test_idx)):
            pos = positives.subset(idx)
            neg = generate_negatives(pos, substream(seed, "negatives", i, side == "test"))
            sides.append(pos.concat(neg))
        folds.append(Fold(i, train_idx, test_idx, *sides))
    return folds


# -- feature cache -----------------------------------------------------------

_MAGIC = b"KINF"
_HEADER = struct.Struct("<4sHII")


class FeatureStore:
    """Directory of ``KINF`` files, one per (reference, descriptor version).

    Values are stored as little-endian float32 arrays of shape
    ``(count, dim)``.
    """

    def __init__(self, root, version=DESCRIPTOR_VERSION):
        self.root = Path(root)
        self.version = int(version)

    def path_for(self, ref):
        digest = hashlib.sha256(str(ref).encode("utf-8")).hexdigest()
        return self.root / digest[:2] / (digest + ".kinf")

    def __contains__(self, ref):
        return self.read(ref) is not None

    def write(self, ref, values):
        arr = np.atleast_2d(np.asarray(values, dtype="<f4"))
        path = self.path_for(ref)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = _HEADER.pack(_MAGIC, self.version, arr.shape[0], arr.shape[1]) + arr.tobytes()
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
        return path

    def read(self, ref):
        """Cached array, or ``None`` when absent or written by another version."""
        path = self.path_for(ref)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            return None
        if len(blob) < _HEADER.size:
            raise ValueError("%s: truncated feature file" % path)
        magic, version, count, dim = _HEADER.unpack_from(blob)
        if magic != _MAGIC:
            raise ValueError("%s: bad magic %r" % (path, magic))
        if version != self.version:
            return None
        body = blob[_HEADER.size:]
        if len(body) != 4 * count * dim:
            raise ValueError("%s: expected %d values, found %d bytes"
                             % (path, count * dim, len(body)))
        return np.frombuffer(body, dtype="<f4").reshape(count, dim).copy()


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthData:
    """Planted-model dataset; ``positives`` are in family order."""

    positives: Triples
    triples: Triples
    W_f: np.ndarray = None
    W_m: np.ndarray = None
    planted: dict = field(default_factory=dict)
    resembles_father: np.ndarray = None

    @property
    def W_p(self):
        return np.vstack([self.W_f, self.W_m])

    def planted_scores(self, father, mother, child):
        """Score of the generating model: ``f^T W_f c + m^T W_m c``."""
        f, m, c = (np.atleast_2d(x) for x in (father, mother, child))
        return (np.einsum("ij,ij->i", f @ self.W_f, c)
                + np.einsum("ij,ij->i", m @ self.W_m, c))


def _orthonormal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _unit_rows(rng, n, r):
    z = rng.standard_normal((n, r))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def synth_generate(d=16, n_pos=1000, rank=3, noise_sigma=0.1, seed=0,
                   resemblance=None, signal=2.0):
    """Families whose child is generated from low-rank parent factors.

    Each parent carries a latent ``z`` of fixed norm ``signal`` in a planted
    rank-``rank`` subspace ``U`` and spherical noise elsewhere; the child
    holds ``w_f V_f z_f + w_m V_m z_m`` plus spherical noise off
    ``[V_f, V_m]`` and ``noise_sigma`` isotropic noise. The planted matrices
    are ``W = U V^T``, so a true family scores ``signal**2 * (w_f + w_m)``
    while any other pairing scores strictly less when ``noise_sigma = 0``.

    ``resemblance=(hi, lo)`` draws, per family, which parent gets the larger
    weight; otherwise ``w_f = w_m = 1``. Negatives are a seeded derangement
    of children.
    """
    if not (isinstance(d, (int, np.integer)) and isinstance(rank, (int, np.integer))):
        raise ValueError("d and rank must be integers")
    if rank < 1 or 2 * rank > d:
        raise ValueError("need 1 <= rank and 2 * rank <= d, got d=%d rank=%d" % (d, rank))
    if n_pos < 2:
        raise ValueError("n_pos must be at least 2")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = substream(seed, "synth")
    Q1, Q2, Q3 = (_orthonormal(rng, d) for _ in range(3))
    U_f, U_m = Q1[:, :rank], Q3[:, :rank]
    V_f, V_m = Q2[:, :rank], Q2[:, rank:2 * rank]

    z_f = signal * _unit_rows(rng, n_pos, rank)
    z_m = signal * _unit_rows(rng, n_pos, rank)

    def off(basis, n):
        g = rng.standard_normal((n, d))
        return g - (g @ basis) @ basis.T

    F = off(U_f, n_pos) + z_f @ U_f.T
    M = off(U_m, n_pos) + z_m @ U_m.T
    if resemblance is None:
        w_f = w_m = np.ones(n_pos)
        father_side = None
    else:
        hi, lo = resemblance
        father_side = rng.random(n_pos) < 0.5
        w_f = np.where(father_side, hi, lo)
        w_m = np.where(father_side, lo, hi)
    C = (off(Q2[:, :2 * rank], n_pos)
         + w_f[:, None] * (z_f @ V_f.T) + w_m[:, None] * (z_m @ V_m.T)
         + noise_sigma * rng.standard_normal((n_pos, d)))

    ids = ["s%05d" % i for i in range(n_pos)]
    pos = Triples(F, M, C, np.ones(n_pos, dtype=int), ids)
    neg = generate_negatives(pos, substream(seed, "negatives"))
    return SynthData(pos, pos.concat(neg), U_f @ V_f.T, U_m @ V_m.T,
                     resembles_father=father_side)


def synth_patch_generate(n_pos=500, patches=49, per_patch=16, n_planted=10,
                         shift=0.5, link=0.6, seed=0):
    """Patch-structured triples where only planted patches carry signal.

    Each role gets ``n_planted`` planted patches. On them, features are
    shifted by ``label * shift`` along a fixed unit direction per patch, and
    for positives the i-th planted child patch is mixed with the i-th planted
    father and mother patches (weight ``link``). All other patches are
    spherical noise. Negatives are independent draws rather than re-paired
    positives, because a linear fit on concatenated features sees no signal
    when every identity appears once in each class.
    """
    if not 1 <= n_planted <= patches:
        raise ValueError("n_planted must lie in [1, patches]")
    if not 0 <= link < 1:
        raise ValueError("link must lie in [0, 1)")
    rng = substream(seed, "synth-patch")
    dim = patches * per_patch
    planted = {role: sorted(int(k) for k in rng.choice(patches, n_planted, replace=False))
               for role in ("father", "mother", "child")}
    labels = np.repeat([1, -1], n_pos)
    X = {role: rng.standard_normal((2 * n_pos, dim)) for role in ("father", "mother", "child")}

    def cols(k):
        return slice(k * per_patch, (k + 1) * per_patch)

    pos = slice(0, n_pos)
    for kf, km, kc in zip(planted["father"], planted["mother"], planted["child"]):
        parents = (X["father"][pos, cols(kf)] + X["mother"][pos, cols(km)]) / np.sqrt(2)
        X["child"][pos, cols(kc)] = (np.sqrt(1 - link ** 2) * X["child"][pos, cols(kc)]
                                     + link * parents)
    for role in ("father", "mother", "child"):
        dirs = _unit_rows(rng, patches, per_patch)
        for k in planted[role]:
            X[role][:, cols(k)] += (shift * labels)[:, None] * dirs[k]
    ids = ["p%05d" % i for i in range(2 * n_pos)]
    triples = Triples(X["father"], X["mother"], X["child"], labels, ids)
    return SynthData(triples.subset(np.arange(n_pos)), triples, planted=planted)
