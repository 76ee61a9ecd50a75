"""Time-series to recurrence-image encoding.

Gray-level convention: a pixel holds the state distance divided by the
largest distance in the same image, so 0 means identical states and 1 the
farthest pair. Binary mode applies the Heaviside step with theta(0) = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "EmbeddingParams",
    "RecurrenceImage",
    "embed",
    "distance_matrix",
    "to_recurrence_image",
    "binarize",
    "resize_max_side",
    "encode_series",
    "export_image",
]

NORMS = ("euclidean", "manhattan", "chebyshev")


@dataclass(frozen=True)
class EmbeddingParams:
    m: int = 3
    tau: int = 4
    # None selects gray mode
    epsilon: float | None = None
    # when True, epsilon is a fraction of the image's largest distance
    relative_epsilon: bool = False
    norm: str = "euclidean"

    def __post_init__(self):
        if self.m < 1 or self.tau < 1:
            raise ConfigError(f"embedding needs m >= 1 and tau >= 1, got m={self.m}, tau={self.tau}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r}; choose from {NORMS}")

    @property
    def mode(self) -> str:
        return "gray" if self.epsilon is None else "binary"

    def n_states(self, length: int) -> int:
        return length - (self.m - 1) * self.tau


@dataclass(frozen=True)
class RecurrenceImage:
    pixels: np.ndarray
    mode: str = "gray"
    source_id: object = None

    @property
    def side(self) -> int:
        return int(self.pixels.shape[0])


def embed(x, p: EmbeddingParams) -> np.ndarray:
    """Delay-embed a series into ``K = l - (m-1)*tau`` states of dimension ``m``.

    Row ``i`` is ``(x[i], x[i+tau], ..., x[i+(m-1)*tau])``.
    """
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    K = p.n_states(x.shape[0])
    if K < 2:
        raise DataError(f"series of length {x.shape[0]} too short for m={p.m}, tau={p.tau} (K={K})")
    idx = np.arange(K)[:, None] + p.tau * np.arange(p.m)[None, :]
    return x[idx]


def distance_matrix(states, norm: str = "euclidean") -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if states.shape[0] == 0:
        raise DataError("empty state list")
    K, m = states.shape
    acc = np.zeros((K, K))
    # per-coordinate accumulation keeps memory at K*K and sums in a fixed order
    for k in range(m):
        diff = np.abs(states[:, None, k] - states[None, :, k])
        if norm == "euclidean":
            acc += diff * diff
        elif norm == "manhattan":
            acc += diff
        elif norm == "chebyshev":
            np.maximum(acc, diff, out=acc)
        else:
            raise ConfigError(f"unknown norm {norm!r}")
    return np.sqrt(acc) if norm == "euclidean" else acc


def to_recurrence_image(d, p: EmbeddingParams, source_id=None) -> RecurrenceImage:
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise DataError("negative distance entry")
    dmax = float(d.max()) if d.size else 0.0
    if p.epsilon is not None:
        if p.relative_epsilon:
            # compare on the normalized scale so this matches binarize(gray image, epsilon)
            g = d / dmax if dmax > 0 else np.zeros_like(d)
            pixels = (p.epsilon - g >= 0).astype(np.float64)
        else:
            pixels = (p.epsilon - d >= 0).astype(np.float64)
        return RecurrenceImage(pixels, "binary", source_id)
    pixels = d / dmax if dmax > 0 else np.zeros_like(d)
    return RecurrenceImage(pixels, "gray", source_id)


def binarize(img: RecurrenceImage, threshold: float) -> RecurrenceImage:
    """Threshold a gray image: pixel 1 where the normalized distance is <= threshold."""
    return RecurrenceImage((threshold - img.pixels >= 0).astype(np.float64), "binary", img.source_id)


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    # pixel-center aligned sampling; edges clamp
    W = np.zeros((n_out, n_in))
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(W, (rows, lo), 1 - frac)
    np.add.at(W, (rows, hi), frac)
    return W


def resize_max_side(img: RecurrenceImage, max_side: int = 300) -> RecurrenceImage:
    """Bilinearly downsample a square image whose side exceeds ``max_side``.

    Never upsamples. Rows and columns use the same sampling grid, so a
    symmetric input stays symmetric.
    """
    if max_side < 16:
        raise ConfigError(f"max_side must be >= 16, got {max_side}")
    h, w = img.pixels.shape
    if max(h, w) <= max_side:
        return img
    scale = max_side / max(h, w)
    oh, ow = max(1, round(h * scale)), max(1, round(w * scale))
    out = _bilinear_weights(h, oh) @ img.pixels @ _bilinear_weights(w, ow).T
    if h == w:
        out = 0.5 * (out + out.T)
    return RecurrenceImage(out, img.mode, img.source_id)


def encode_series(x, p: EmbeddingParams, max_side: int | None = 300) -> RecurrenceImage:
    """Full series -> image path: embed, distances, gray/binary mapping, downsizing."""
    sid = getattr(x, "id", None)
    img = to_recurrence_image(distance_matrix(embed(x, p), p.norm), p, source_id=sid)
    if max_side is not None:
        img = resize_max_side(img, max_side)
    return img


def quantize(pixels) -> np.ndarray:
    """8-bit quantization with round-half-up: q = floor(p * 255 + 0.5)."""
    p = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    return np.floor(p * 255 + 0.5).astype(np.uint8)


def export_image(img: RecurrenceImage, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".") or "pgm").lower()
    q = quantize(img.pixels)
    if fmt == "pgm":
        h, w = q.shape
        header = f"P5\n# 8-bit gray, value = floor(p*255 + 0.5)\n{w} {h}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(q.tobytes())
    elif fmt == "png":
        from PIL import Image

        Image.fromarray(q).save(path, format="PNG")
    else:
        raise ConfigError(f"unsupported image format {fmt!r}")
