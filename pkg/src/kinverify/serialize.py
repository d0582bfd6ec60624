"""Binary ``KINM`` model container plus JSON sidecar.

Layout (little-endian)::

    b"KINM" | u16 version | u8 kind tag | u32 entry count
    entry := u16 name length | name (utf-8) | u8 ndim | u32 dims[ndim]
             | float64 values, row-major

Block ensembles store their per-patch models as entries prefixed ``m<i>.``.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import models

MAGIC = b"KINM"
VERSION = 1
KIND_TAGS = {"sbm": 1, "abm": 2, "rsbm": 3, "concat-baseline": 4, "block": 5}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

_FIELDS = {
    "sbm": ("W_f", "W_m", "beta1", "beta2", "bias", "calib_father", "calib_mother"),
    "rsbm": ("W_f", "W_m", "beta1", "beta2", "bias", "alpha", "p0",
             "calib_father", "calib_mother"),
    "abm": ("W_p", "bias"),
    "concat-baseline": ("w", "bias"),
}
_SCALARS = {"beta1", "beta2", "bias", "alpha", "p0"}
_PAIRS = {"calib_father", "calib_mother"}
_CLASSES = {"sbm": models.SBMModel, "rsbm": models.RSBMModel,
            "abm": models.ABMModel, "concat-baseline": models.ConcatModel}


def model_arrays(model):
    """Flatten a fitted model into ``(kind, {name: ndarray})``."""
    if model.kind == "block":
        out = {
            "base_kind": np.array(KIND_TAGS[model.base_kind], dtype=float),
            "father_patches": np.asarray(model.father_patches, dtype=float),
            "mother_patches": np.asarray(model.mother_patches, dtype=float),
            "child_patches": np.asarray(model.child_patches, dtype=float),
            "per_patch": np.array(model.per_patch, dtype=float),
            "weights": np.asarray(model.weights, dtype=float),
            "bias": np.array(model.bias, dtype=float),
        }
        for i, sub in enumerate(model.models):
            for name, arr in model_arrays(sub)[1].items():
                out["m%d.%s" % (i, name)] = arr
        return "block", out
    return model.kind, {name: np.asarray(getattr(model, name), dtype=float)
                        for name in _FIELDS[model.kind]}


def model_from_arrays(kind, arrays):
    if kind == "block":
        base = _TAG_KINDS[int(arrays["base_kind"])]
        n = arrays["weights"].size
        subs = []
        for i in range(n):
            prefix = "m%d." % i
            subs.append(model_from_arrays(
                base, {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}))
        return models.BlockEnsemble(
            base,
            [int(k) for k in arrays["father_patches"]],
            [int(k) for k in arrays["mother_patches"]],
            [int(k) for k in arrays["child_patches"]],
            int(arrays["per_patch"]), subs, arrays["weights"].copy(), float(arrays["bias"]),
        )
    kwargs = {}
    for name in _FIELDS[kind]:
        arr = arrays[name]
        if name in _SCALARS:
            kwargs[name] = float(arr)
        elif name in _PAIRS:
            kwargs[name] = (float(arr[0]), float(arr[1]))
        else:
            kwargs[name] = arr.copy()
    return _CLASSES[kind](**kwargs)


def dumps_model(model):
    kind, arrays = model_arrays(model)
    parts = [MAGIC, struct.pack("<HBI", VERSION, KIND_TAGS[kind], len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack("<%dI" % arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_model(blob):
    if blob[:4] != MAGIC:
        raise ValueError("not a KINM model file (magic %r)" % (blob[:4],))
    version, tag, count = struct.unpack_from("<HBI", blob, 4)
    if version != VERSION:
        raise ValueError("unsupported model format version %d" % version)
    if tag not in _TAG_KINDS:
        raise ValueError("unknown model kind tag %d" % tag)
    pos = 4 + struct.calcsize("<HBI")
    arrays = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from("<%dI" % ndim, blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(blob):
                raise ValueError("truncated array %r" % name)
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise ValueError("truncated model file: %s" % exc) from None
    return model_from_arrays(_TAG_KINDS[tag], arrays)


def sidecar_path(path):
    return str(path) + ".json"


def save_model(path, model, config=None):
    """Write the binary container and ``<path>.json`` with the fit settings."""
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))
    doc = dict(config or {})
    doc["kind"] = model.kind
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Return ``(model, sidecar dict)``; the sidecar is empty when missing."""
    with open(path, "rb") as fh:
        model = loads_model(fh.read())
    try:
        with open(sidecar_path(path), encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        config = {}
    return model, config
