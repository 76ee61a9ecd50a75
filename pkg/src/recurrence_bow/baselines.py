"""1-NN baselines: Euclidean distance and dynamic time warping."""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import DataError


def _stack_fixed(series, what: str) -> np.ndarray:
    lengths = {len(s.values) for s in series}
    if len(lengths) != 1:
        raise DataError(f"{what} split is not fixed-length: lengths {sorted(lengths)}")
    return np.vstack([s.values for s in series])


def nn_labels(dist: np.ndarray, train_labels) -> np.ndarray:
    # argmin keeps the first minimum: ties go to the lower training index
    return np.asarray(train_labels)[np.argmin(dist, axis=1)]


def error_rate(pred, truth) -> float:
    return float(np.mean(np.asarray(pred) != np.asarray(truth)))


def euclidean_distances(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = A[:, None, k] - B[None, :, k]
        d2 += diff * diff
    return np.sqrt(d2)


def baseline_1nn_euclidean(d) -> float:
    Xtr = _stack_fixed(d.train, "train")
    Xte = _stack_fixed(d.test, "test")
    if Xtr.shape[1] != Xte.shape[1]:
        raise DataError(f"train length {Xtr.shape[1]} != test length {Xte.shape[1]}")
    pred = nn_labels(euclidean_distances(Xte, Xtr), [s.label for s in d.train])
    return error_rate(pred, [s.label for s in d.test])


@numba.njit(cache=True)
def _dtw(a, b, radius):
    n, m = a.shape[0], b.shape[0]
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[:] = inf
        lo = max(1, i - radius)
        hi = min(m, i + radius)
        for j in range(lo, hi + 1):
            diff = a[i - 1] - b[j - 1]
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = diff * diff + best
        prev, cur = cur, prev
    return prev[m]


def dtw_distance(a, b, window: float | None = None) -> float:
    """DTW with squared-difference local cost.

    ``window`` is the Sakoe-Chiba band radius as a fraction of the longer
    series (radius ``ceil(window * l)``); None means no band.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if window is None:
        radius = max(n, m)
    else:
        if not 0 < window <= 1:
            raise DataError(f"window must be in (0, 1], got {window}")
        radius = max(int(math.ceil(window * max(n, m))), abs(n - m))
    return float(_dtw(a, b, radius))


@numba.njit(cache=True)
def _dtw_matrix(A, B, radius):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = _dtw(A[i], B[j], radius)
    return out


def baseline_1nn_dtw(d, window: float | None = None) -> float:
    Xtr = _stack_fixed(d.train, "train")
    Xte = _stack_fixed(d.test, "test")
    if Xtr.shape[1] != Xte.shape[1]:
        raise DataError(f"train length {Xtr.shape[1]} != test length {Xte.shape[1]}")
    length = Xtr.shape[1]
    if window is None:
        radius = length
    else:
        if not 0 < window <= 1:
            raise DataError(f"window must be in (0, 1], got {window}")
        radius = int(math.ceil(window * length))
    pred = nn_labels(_dtw_matrix(Xte, Xtr, radius), [s.label for s in d.train])
    return error_rate(pred, [s.label for s in d.test])
