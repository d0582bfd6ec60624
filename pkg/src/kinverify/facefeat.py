"""Dense SIFT-like patch descriptors for aligned 64x64 grayscale faces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 64
PATCH_SIZE = 16
GRID = 7
N_PATCHES = GRID * GRID
STRIDE = (IMAGE_SIZE - PATCH_SIZE) // (GRID - 1)  # 8
N_CELLS = 4
N_BINS = 8
DESCRIPTOR_DIM = N_CELLS * N_CELLS * N_BINS  # 128
DESCRIPTOR_VERSION = 1

_CLIP = 0.2
_MIN_ENERGY = 1e-12


@dataclass(frozen=True)
class PatchGrid:
    """Row-major 7x7 grid of patch descriptors, shape (49, 128)."""

    patches: np.ndarray

    @property
    def descriptor_dim(self):
        return self.patches.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    patch_ids: tuple

    def __len__(self):
        return self.values.shape[0]


def patch_offsets():
    """Top-left pixel offsets of the 7x7 patch layout, row-major."""
    starts = np.arange(GRID) * STRIDE
    return [(int(r), int(c)) for r in starts for c in starts]


def _check_image(img):
    img = np.asarray(img)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(
            "expected a %dx%d image, got shape %s" % (IMAGE_SIZE, IMAGE_SIZE, img.shape)
        )
    if img.min() < 0 or img.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    return img


def patch_descriptor(patch):
    """128-dim gradient-orientation histogram of a 16x16 patch.

    4x4 spatial cells of 4x4 pixels, 8 orientation bins with linear
    interpolation between neighbouring bins, L2 normalized, clipped at 0.2
    and renormalized. Gradients are central differences with replicated
    borders taken on the raw intensities, so a constant offset leaves the
    descriptor bit-for-bit unchanged.
    """
    p = np.asarray(patch, dtype=float)
    if p.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ValueError("expected a 16x16 patch, got shape %s" % (p.shape,))
    padded = np.pad(p, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / (2 * 255.0)
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / (2 * 255.0)
    mag = np.hypot(gx, gy)
    if float((mag * mag).sum()) < _MIN_ENERGY:
        return np.zeros(DESCRIPTOR_DIM)

    theta = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    pos = theta / (2 * np.pi / N_BINS)
    lo = np.floor(pos).astype(int) % N_BINS
    hi = (lo + 1) % N_BINS
    frac = pos - np.floor(pos)

    cell = PATCH_SIZE // N_CELLS
    rows = np.arange(PATCH_SIZE) // cell
    cell_idx = (rows[:, None] * N_CELLS + rows[None, :]).ravel()
    hist = np.zeros((N_CELLS * N_CELLS, N_BINS))
    np.add.at(hist, (cell_idx, lo.ravel()), (mag * (1 - frac)).ravel())
    np.add.at(hist, (cell_idx, hi.ravel()), (mag * frac).ravel())

    desc = hist.ravel()
    desc /= np.linalg.norm(desc)
    np.minimum(desc, _CLIP, out=desc)
    return desc / np.linalg.norm(desc)


def extract_patch_grid(img):
    """Descriptors of the 49 overlapping 16x16 patches at stride 8."""
    img = _check_image(img)
    patches = np.stack([
        patch_descriptor(img[r:r + PATCH_SIZE, c:c + PATCH_SIZE])
        for r, c in patch_offsets()
    ])
    return PatchGrid(patches)


def face_feature(grid, selection=None):
    """Concatenate the selected patch descriptors (all 49 by default)."""
    patches = grid.patches if isinstance(grid, PatchGrid) else np.asarray(grid)
    n = patches.shape[0]
    if selection is None:
        ids = tuple(range(n))
    else:
        ids = tuple(int(k) for k in selection)
        if any(k < 0 or k >= n for k in ids):
            raise ValueError("patch index out of range [0, %d]" % (n - 1))
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("patch indices must be strictly increasing")
    return FeatureVector(patches[list(ids)].ravel().copy(), ids)


def read_pgm(path):
    """Load an 8-bit grayscale PGM (binary P5) file as a uint8 array."""
    from PIL import Image

    with open(path, "rb") as fh:
        if fh.read(2) != b"P5":
            raise ValueError("%s: not a binary PGM (P5) file" % path)
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError("%s: expected 8-bit grayscale, got mode %s" % (path, im.mode))
        return np.asarray(im, dtype=np.uint8).copy()


def write_pgm(path, img):
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PPM")
