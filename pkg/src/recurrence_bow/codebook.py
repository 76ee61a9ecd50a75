"""Visual codebook: k-means initialization, LLC coding, incremental
LLC codebook optimization, and max-pooling of codes.

Words are stored as rows of an ``(M, dim)`` array.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.linalg import lapack

from .errors import ConfigError, DataError, NumericError
from .serialization import save_npz

log = logging.getLogger(__name__)

CODEBOOK_FORMAT = "recurrence_bow.codebook/1"
POOLING_MODES = ("abs", "signed")


@dataclass
class Codebook:
    words: np.ndarray
    provenance: str = "initial"
    rng_seed: int | None = None
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.float64)
        if self.words.ndim != 2 or self.words.shape[0] < 2:
            raise ConfigError(f"a codebook needs at least 2 words, got shape {self.words.shape}")
        if not np.all(np.isfinite(self.words)):
            raise NumericError("codebook contains non-finite words")

    @property
    def M(self) -> int:
        return int(self.words.shape[0])

    @property
    def dim(self) -> int:
        return int(self.words.shape[1])

    def to_arrays(self, prefix: str = "") -> dict:
        meta = {"format": CODEBOOK_FORMAT, "provenance": self.provenance,
                "rng_seed": self.rng_seed, "hyperparameters": self.hyperparameters}
        return {prefix + "words": self.words, prefix + "meta": np.array(json.dumps(meta))}

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> "Codebook":
        meta = json.loads(str(arrays[prefix + "meta"]))
        if meta.get("format") != CODEBOOK_FORMAT:
            raise DataError(f"unsupported codebook format {meta.get('format')!r}")
        return cls(np.array(arrays[prefix + "words"]), meta["provenance"], meta["rng_seed"],
                   meta["hyperparameters"])

    def save(self, path) -> None:
        save_npz(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "Codebook":
        with np.load(path, allow_pickle=False) as z:
            return cls.from_arrays(z)


@dataclass(frozen=True)
class LlcParams:
    knn: int = 5
    # None: estimated from data at optimization time
    sigma: float | None = None
    mu_reg: float = 500.0
    bias_cutoff: float = 0.01
    ridge: float = 1e-8

    def __post_init__(self):
        if self.knn < 1:
            raise ConfigError(f"knn must be >= 1, got {self.knn}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.mu_reg < 0 or self.ridge < 0:
            raise ConfigError("mu_reg and ridge must be >= 0")


def _as_matrix(x) -> np.ndarray:
    x = getattr(x, "vectors", x)
    return np.asarray(x, dtype=np.float64)


def _words(D) -> np.ndarray:
    return D.words if isinstance(D, Codebook) else np.asarray(D, dtype=np.float64)


def sq_distances(X, W, chunk: int = 8192) -> np.ndarray:
    """Squared Euclidean distances ``(n, M)`` via the expanded form, clipped at 0."""
    X = _as_matrix(X)
    Wn = np.einsum("ij,ij->i", W, W)
    out = np.empty((X.shape[0], W.shape[0]))
    for a in range(0, X.shape[0], chunk):
        Xc = X[a:a + chunk]
        block = np.einsum("ij,ij->i", Xc, Xc)[:, None] - 2.0 * Xc @ W.T + Wn[None, :]
        np.maximum(block, 0.0, out=block)
        out[a:a + chunk] = block
    return out


def _nearest(X, W, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    X = _as_matrix(X)
    idx = np.empty(X.shape[0], dtype=int)
    dist = np.empty(X.shape[0])
    for a in range(0, X.shape[0], chunk):
        d = sq_distances(X[a:a + chunk], W)
        idx[a:a + chunk] = d.argmin(axis=1)
        dist[a:a + chunk] = d[np.arange(d.shape[0]), idx[a:a + chunk]]
    return idx, dist


def _kmeanspp(X, M, rng) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((M, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, M):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than clusters; duplicates are reseeded later
            pick = rng.integers(n)
        else:
            pick = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        centers[j] = X[pick]
        np.minimum(closest, ((X - centers[j]) ** 2).sum(axis=1), out=closest)
    return centers


def kmeans(bag, M: int, max_iters: int = 50, seed: int = 0) -> Codebook:
    """Lloyd's k-means with k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iters`` assignment rounds.
    A cluster left empty is moved onto the point farthest from its centroid.
    The within-cluster sum of squares after every assignment round is kept in
    ``hyperparameters["inertia_history"]``.
    """
    X = _as_matrix(bag)
    n = X.shape[0]
    if n < M:
        raise DataError(f"bag of {n} descriptors is smaller than M={M}")
    if M < 2:
        raise ConfigError(f"M must be >= 2, got {M}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, M, rng)

    assign, _ = _nearest(X, C)
    history = [float(((X - C[assign]) ** 2).sum())]
    iters = 1
    while iters < max_iters:
        counts = np.bincount(assign, minlength=M)
        member = sparse.csr_matrix((np.ones(n), (assign, np.arange(n))), shape=(M, n))
        sums = member @ X
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            resid = ((X - C[assign]) ** 2).sum(axis=1)
            far = np.argsort(-resid, kind="stable")[:empty.size]
            C[empty] = X[far]
        new_assign, _ = _nearest(X, C)
        iters += 1
        history.append(float(((X - C[new_assign]) ** 2).sum()))
        if np.array_equal(new_assign, assign) and not empty.size:
            assign = new_assign
            break
        assign = new_assign
    hp = {"algorithm": "kmeans", "max_iters": max_iters, "iterations": iters,
          "inertia_history": history, "bag_size": n}
    return Codebook(C, "initial", seed, hp)


def locality_adaptor(s, D, sigma: float) -> np.ndarray:
    """``exp(-||s - w_j||^2 / sigma)`` scaled so its maximum (nearest word) is 1."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    W = _words(D)
    d2 = ((W - np.asarray(s, dtype=np.float64)) ** 2).sum(axis=1)
    return np.exp(-(d2 - d2.min()) / sigma)


def _solve_sum_to_one(C: np.ndarray, ridge: float, extra_diag=None) -> np.ndarray:
    """Minimize ``c^T C c`` subject to ``sum(c) = 1``.

    Adds ``ridge * trace(C)`` (or plain ``ridge`` when the trace is 0) to the
    diagonal; on failure the ridge grows tenfold, at most three times.
    """
    k = C.shape[0]
    tr = float(np.trace(C))
    base = C if extra_diag is None else C + np.diag(extra_diag)
    ones = np.ones(k)
    lam = ridge
    for _ in range(4):
        reg = lam * tr if tr > 0 else max(lam, 1e-12)
        A = base + reg * np.eye(k)
        _, w, info = lapack.dposv(A, ones)
        if info == 0 and np.all(np.isfinite(w)):
            total = w.sum()
            if total != 0 and math.isfinite(total):
                return w / total
        lam *= 10
    raise NumericError("singular constrained least-squares system (duplicated codebook words?)")


def _knn_order(d2: np.ndarray, knn: int) -> np.ndarray:
    # stable sort: equal distances keep the lower word index first
    return np.argsort(d2, kind="stable")[:knn]


def llc_code(s, D, p: LlcParams = LlcParams()) -> np.ndarray:
    """LLC code of one descriptor as a dense length-``M`` vector.

    The ``knn`` nearest words reconstruct ``s`` by sum-to-one least squares.
    """
    W = _words(D)
    if p.knn > W.shape[0]:
        raise ConfigError(f"knn={p.knn} exceeds codebook size {W.shape[0]}")
    s = np.asarray(s, dtype=np.float64)
    d2 = ((W - s) ** 2).sum(axis=1)
    idx = _knn_order(d2, p.knn)
    B = W[idx] - s
    code = np.zeros(W.shape[0])
    code[idx] = _solve_sum_to_one(B @ B.T, p.ridge)
    return code


def llc_encode(S, D, p: LlcParams = LlcParams(), chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Batched LLC coding. Returns ``(indices, values)``, both ``(n, knn)``."""
    X = _as_matrix(S)
    W = _words(D)
    k = p.knn
    if k > W.shape[0]:
        raise ConfigError(f"knn={k} exceeds codebook size {W.shape[0]}")
    n = X.shape[0]
    idx_out = np.empty((n, k), dtype=int)
    val_out = np.empty((n, k))
    eye = np.eye(k)
    for a in range(0, n, chunk):
        Xc = X[a:a + chunk]
        d2 = sq_distances(Xc, W)
        if k < W.shape[0]:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        else:
            part = np.tile(np.arange(k), (Xc.shape[0], 1))
        # order the k neighbours by (distance, index) for determinism
        rows = np.arange(Xc.shape[0])[:, None]
        order = np.lexsort((part, d2[rows, part]), axis=1)
        idx = part[rows, order]
        B = W[idx] - Xc[:, None, :]
        C = np.einsum("nkd,nld->nkl", B, B)
        tr = np.trace(C, axis1=1, axis2=2)
        reg = np.where(tr > 0, p.ridge * tr, max(p.ridge, 1e-12))
        A = C + reg[:, None, None] * eye
        try:
            w = np.linalg.solve(A, np.ones((Xc.shape[0], k, 1)))[..., 0]
            vals = w / w.sum(axis=1, keepdims=True)
            bad = ~np.all(np.isfinite(vals), axis=1)
        except np.linalg.LinAlgError:
            vals = np.empty((Xc.shape[0], k))
            bad = np.ones(Xc.shape[0], dtype=bool)
        for r in np.flatnonzero(bad):
            vals[r] = _solve_sum_to_one(C[r], p.ridge)
        idx_out[a:a + chunk] = idx
        val_out[a:a + chunk] = vals
    return idx_out, val_out


def reconstruction_error(S, D, p: LlcParams = LlcParams()) -> float:
    """Mean residual norm ``||s - sum_j c_j w_j||`` under LLC coding."""
    X = _as_matrix(S)
    W = _words(D)
    idx, vals = llc_encode(X, W, p)
    recon = np.einsum("nk,nkd->nd", vals, W[idx])
    return float(np.linalg.norm(X - recon, axis=1).mean())


def estimate_sigma(S, D, sample: int = 1000, seed: int = 0) -> float:
    """Mean squared distance from a descriptor sample to its nearest word."""
    X = _as_matrix(S)
    rng = np.random.default_rng(seed)
    if X.shape[0] > sample:
        X = X[np.sort(rng.choice(X.shape[0], sample, replace=False))]
    _, d2 = _nearest(X, _words(D))
    sigma = float(d2.mean())
    return sigma if sigma > 0 else 1.0


def _regularized_sum_to_one(B: np.ndarray, diag: np.ndarray, ridge: float) -> np.ndarray:
    """Sum-to-one minimizer of ``c^T (B B^T + diag + ridge*tr) c`` for ``B`` of shape (M, d).

    For M > d the system is diagonal plus rank d, so it is solved through the
    Woodbury identity with a d x d Cholesky instead of an M x M one.
    """
    M, dim = B.shape
    tr = float(np.einsum("ij,ij->", B, B))
    lam = diag + (ridge * tr if tr > 0 else max(ridge, 1e-12))
    if M <= dim:
        return _solve_sum_to_one(B @ B.T, ridge, diag)
    inv = 1.0 / lam
    Bl = B * inv[:, None]
    K = Bl.T @ B
    K[np.diag_indices(dim)] += 1.0
    _, z, info = lapack.dposv(K, Bl.sum(axis=0))
    w = inv - Bl @ z if info == 0 else None
    if w is None or not np.all(np.isfinite(w)) or w.sum() == 0:
        return _solve_sum_to_one(B @ B.T, ridge, diag)
    return w / w.sum()


def optimization_penalty(d2: np.ndarray, sigma: float) -> np.ndarray:
    """Per-word penalty ``exp((d2 - max d2) / sigma)``: 1 for the farthest word, smallest for the nearest."""
    return np.exp((d2 - d2.max()) / sigma)


def regularized_code(s, D, mu_reg: float, sigma: float, ridge: float = 1e-8) -> np.ndarray:
    """Dense locality-regularized sum-to-one code over every word (coding step of the optimizer)."""
    W = _words(D)
    B = W - np.asarray(s, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", B, B)
    return _regularized_sum_to_one(B, mu_reg * optimization_penalty(d2, sigma) ** 2, ridge)


@dataclass
class OptimizationStats:
    visited: int = 0
    skipped: int = 0


def optimize_codebook(D_init: Codebook, S, p: LlcParams = LlcParams(), seed: int = 0,
                      passes: int = 1) -> Codebook:
    """Incremental LLC codebook optimization (one online pass per ``passes``).

    For each descriptor, visited in a seeded random order:

    1. locality-regularized sum-to-one coding over all words, where word j's
       penalty grows as ``exp(||s - w_j||^2 / sigma)`` scaled into (0, 1]
       (the farthest word has penalty 1);
    2. words with ``|c_j| > bias_cutoff`` form the active set;
    3. the active set is refit by plain sum-to-one least squares;
    4. active words take a gradient step of size ``sqrt(1/t)`` on the
       reconstruction residual, scaled by ``1/||c||``, and are projected back
       onto the unit ball.
    """
    X = _as_matrix(S)
    if X.shape[0] == 0:
        raise DataError("empty descriptor bag")
    D = np.array(D_init.words, dtype=np.float64)
    M = D.shape[0]
    sigma = p.sigma if p.sigma is not None else estimate_sigma(X, D, seed=seed)
    rng = np.random.default_rng(seed)
    stats = OptimizationStats()
    t = 0
    for _ in range(passes):
        for i in rng.permutation(X.shape[0]):
            t += 1
            s = X[i]
            stats.visited += 1
            B = D - s
            d2 = np.einsum("ij,ij->i", B, B)
            penalty = optimization_penalty(d2, sigma)
            c = _regularized_sum_to_one(B, p.mu_reg * penalty ** 2, p.ridge)
            active = np.flatnonzero(np.abs(c) > p.bias_cutoff)
            if active.size == 0:
                stats.skipped += 1
                continue
            Ba = B[active]
            ct = _solve_sum_to_one(Ba @ Ba.T, p.ridge)
            resid = s - ct @ D[active]
            eta = math.sqrt(1.0 / t)
            D[active] += (2.0 * eta / np.linalg.norm(ct)) * ct[:, None] * resid[None, :]
            norms = np.linalg.norm(D[active], axis=1)
            D[active] /= np.maximum(norms, 1.0)[:, None]
    if stats.skipped:
        log.info("codebook optimization skipped %d of %d descriptors (empty active set)",
                 stats.skipped, stats.visited)
    hp = dict(D_init.hyperparameters)
    hp.update({"optimizer": "llc_incremental", "knn": p.knn, "sigma": sigma, "mu_reg": p.mu_reg,
               "bias_cutoff": p.bias_cutoff, "ridge": p.ridge, "passes": passes,
               "optimize_seed": seed, "visited": stats.visited, "skipped": stats.skipped})
    return replace(D_init, words=D, provenance="optimized", hyperparameters=hp)


def pool_image(codes, M: int | None = None, mode: str = "abs") -> np.ndarray:
    """Max-pool dense codes of one image and L2-normalize.

    ``mode="abs"`` pools absolute values; ``"signed"`` takes the plain maximum.
    An empty list gives the zero vector (``M`` is then required).
    """
    if mode not in POOLING_MODES:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    codes = [np.asarray(c, dtype=np.float64) for c in codes]
    if not codes:
        if M is None:
            raise ConfigError("M is required to pool an empty code list")
        return np.zeros(M)
    A = np.vstack(codes)
    pooled = (np.abs(A) if mode == "abs" else A).max(axis=0)
    return _l2(pooled)


def pool_sparse(indices, values, M: int, mode: str = "abs") -> np.ndarray:
    """Same result as :func:`pool_image` on the dense expansion of sparse codes."""
    if mode not in POOLING_MODES:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    idx = np.asarray(indices).ravel()
    vals = np.asarray(values, dtype=np.float64).ravel()
    n_codes = np.asarray(indices).shape[0] if np.ndim(indices) > 1 else len(idx)
    if idx.size == 0:
        return np.zeros(M)
    if mode == "abs":
        pooled = np.zeros(M)
        np.maximum.at(pooled, idx, np.abs(vals))
    else:
        pooled = np.full(M, -np.inf)
        np.maximum.at(pooled, idx, vals)
        # a word missing from some code contributes that code's implicit zero
        hits = np.bincount(idx, minlength=M)
        pooled[hits < n_codes] = np.maximum(pooled[hits < n_codes], 0.0)
    return _l2(pooled)


def _l2(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v
