"""Multi-scale dense SIFT-style descriptors.

Each patch is split into 4x4 cells; each cell contributes an 8-bin gradient
orientation histogram (bin centers at k*pi/4, votes shared linearly between
the two nearest centers, weighted by gradient magnitude). Descriptors are
upright (no dominant-orientation rotation) and use no Gaussian window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

N_CELLS = 4
N_BINS = 8
DESCRIPTOR_DIMS = N_CELLS * N_CELLS * N_BINS
CLAMP = 0.2
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class PatchGridParams:
    patch_sizes: tuple[int, ...] = (16, 24, 32, 48)
    stride: int = 8

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        if not self.patch_sizes:
            raise ConfigError("at least one patch size is required")
        for ps in self.patch_sizes:
            if ps < N_CELLS or ps % N_CELLS:
                raise ConfigError(f"patch size {ps} is not a positive multiple of {N_CELLS}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def descriptor_dims(self) -> int:
        return DESCRIPTOR_DIMS


@dataclass
class DescriptorSet:
    """Descriptors of one image: rows of ``vectors`` pair with ``centers``/``scales``."""

    vectors: np.ndarray
    centers: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=int))
    scales: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __len__(self):
        return int(self.vectors.shape[0])


def gradient_field(img) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel gradient magnitude and orientation in [0, 2*pi).

    Central differences inside, one-sided differences on the border. Angle 0
    points along +column, pi/2 along +row.
    """
    p = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if min(p.shape) < 3:
        raise DataError(f"image side must be >= 3, got {p.shape}")
    drow, dcol = np.gradient(p)
    mag = np.hypot(drow, dcol)
    ori = np.mod(np.arctan2(drow, dcol), TWO_PI)
    ori[ori >= TWO_PI] = 0.0
    return mag, ori


def orientation_planes(mag, ori) -> np.ndarray:
    """Split magnitudes into ``(8, H, W)`` planes with linear bin sharing."""
    pos = ori / (TWO_PI / N_BINS)
    base = np.floor(pos)
    frac = pos - base
    lo = base.astype(int) % N_BINS
    hi = (lo + 1) % N_BINS
    planes = np.zeros((N_BINS,) + mag.shape)
    r, c = np.indices(mag.shape)
    # lo != hi, so each assignment touches every (bin, pixel) at most once
    planes[lo, r, c] = mag * (1 - frac)
    planes[hi, r, c] += mag * frac
    return planes


def normalize_descriptors(raw) -> np.ndarray:
    """L2-normalize, clamp components at 0.2 and renormalize; zero rows stay zero."""
    v = np.array(raw, dtype=np.float64, ndmin=2)
    norm = np.linalg.norm(v, axis=1)
    nz = norm > 0
    v[nz] /= norm[nz, None]
    np.minimum(v, CLAMP, out=v)
    norm = np.linalg.norm(v, axis=1)
    nz = norm > 0
    v[nz] /= norm[nz, None]
    return v


def _cell_histograms(planes, r0: int, col_starts, patch_size: int) -> np.ndarray:
    # raw 128-d histograms for patches whose top row is r0, one per column start
    cs = patch_size // N_CELLS
    cols = (col_starts[:, None] + np.arange(patch_size)[None, :]).ravel()
    block = planes[:, r0:r0 + patch_size, :][:, :, cols]
    block = block.reshape(N_BINS, N_CELLS, cs, len(col_starts), N_CELLS, cs).sum(axis=(2, 5))
    # (bin, cell_row, patch, cell_col) -> (patch, cell_row, cell_col, bin)
    return block.transpose(2, 1, 3, 0).reshape(len(col_starts), DESCRIPTOR_DIMS)


def describe_patch(field, center, patch_size: int) -> np.ndarray:
    """Descriptor of the ``patch_size`` square whose center is ``(row, col)``.

    The patch covers rows ``row - patch_size//2 .. row + patch_size//2 - 1``.
    """
    mag, ori = field
    if patch_size % N_CELLS:
        raise ConfigError(f"patch size {patch_size} not divisible by {N_CELLS}")
    r0, c0 = int(center[0]) - patch_size // 2, int(center[1]) - patch_size // 2
    H, W = mag.shape
    if r0 < 0 or c0 < 0 or r0 + patch_size > H or c0 + patch_size > W:
        raise DataError(f"patch of size {patch_size} at {tuple(center)} exceeds image {mag.shape}")
    sub = (mag[r0:r0 + patch_size, c0:c0 + patch_size], ori[r0:r0 + patch_size, c0:c0 + patch_size])
    raw = _cell_histograms(orientation_planes(*sub), 0, np.array([0]), patch_size)
    return normalize_descriptors(raw)[0]


def grid_starts(side: int, patch_size: int, stride: int) -> np.ndarray:
    """Top-left offsets along one axis; there are ``(side - patch)//stride + 1``."""
    if side < patch_size:
        return np.empty(0, dtype=int)
    return np.arange(0, side - patch_size + 1, stride)


def dense_descriptors(img, p: PatchGridParams = PatchGridParams(), keep_flat: bool = False) -> DescriptorSet:
    """Descriptors on a dense grid at every patch size, scale-major then row-major.

    Scales larger than the image are skipped with a warning; flat patches
    (zero gradient mass) are dropped unless ``keep_flat``.
    """
    pixels = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    H, W = pixels.shape
    usable = [ps for ps in p.patch_sizes if ps <= min(H, W)]
    if not usable:
        raise DataError(f"image {pixels.shape} is smaller than every patch size {p.patch_sizes}")
    for ps in p.patch_sizes:
        if ps not in usable:
            log.warning("skipping patch size %d for %dx%d image", ps, H, W)

    planes = orientation_planes(*gradient_field(pixels))
    vecs, centers, scales = [], [], []
    for ps in usable:
        rows, cols = grid_starts(H, ps, p.stride), grid_starts(W, ps, p.stride)
        for r0 in rows:
            vecs.append(_cell_histograms(planes, r0, cols, ps))
            centers.append(np.column_stack([np.full(len(cols), r0 + ps // 2), cols + ps // 2]))
            scales.append(np.full(len(cols), ps))
    raw = np.vstack(vecs)
    centers = np.vstack(centers).astype(int)
    scales = np.concatenate(scales).astype(int)
    if not keep_flat:
        keep = raw.sum(axis=1) > 0
        raw, centers, scales = raw[keep], centers[keep], scales[keep]
    return DescriptorSet(normalize_descriptors(raw) if len(raw) else raw.reshape(0, DESCRIPTOR_DIMS),
                         centers, scales)


def write_descriptor_dump(path, items) -> None:
    """Write ``(image_id, DescriptorSet)`` pairs as ``id,scale,row,col,v1..v128`` lines."""
    with open(path, "w") as fh:
        for image_id, ds in items:
            for vec, (r, c), s in zip(ds.vectors, ds.centers, ds.scales):
                fh.write(",".join([str(image_id), str(s), str(r), str(c)] + [format(x, ".17g") for x in vec]))
                fh.write("\n")
