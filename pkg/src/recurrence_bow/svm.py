"""One-vs-all linear SVM trained by dual coordinate descent (hinge loss).

The bias is learned as the weight of a constant feature ``bias_scale`` that
is appended to every input, so the dual has only box constraints
``0 <= alpha_i <= C`` and is solved one coordinate at a time.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import optimize
from sklearn.model_selection import StratifiedKFold

from .errors import ConfigError, DataError
from .serialization import save_npz

log = logging.getLogger(__name__)

MODEL_FORMAT = "recurrence_bow.linear_model/1"


def default_c_grid() -> tuple[float, ...]:
    return tuple(float(c) for c in np.logspace(-10, 10, 10, base=2.0))


@dataclass(frozen=True)
class CvPlan:
    folds: int = 5
    c_grid: tuple[float, ...] = field(default_factory=default_c_grid)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "c_grid", tuple(float(c) for c in self.c_grid))
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not self.c_grid or any(b <= a for a, b in zip(self.c_grid, self.c_grid[1:])):
            raise ConfigError("c_grid must be non-empty and strictly increasing")


@numba.njit(cache=True)
def _kkt_violation(X, y, C, alpha, w):
    viol = 0.0
    for i in range(X.shape[0]):
        g = y[i] * (X[i] @ w) - 1.0
        if alpha[i] <= 0.0:
            pg = min(g, 0.0)
        elif alpha[i] >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        viol = max(viol, abs(pg))
    return viol


@numba.njit(cache=True)
def _cd_epochs(X, y, C, tol, epochs, order_seed, alpha, w):
    """Up to ``epochs`` dual coordinate-descent passes; updates ``alpha`` and ``w`` in place."""
    n, d = X.shape
    qd = np.empty(n)
    for i in range(n):
        qd[i] = X[i] @ X[i]
    np.random.seed(order_seed)
    order = np.arange(n)
    done = 0
    viol = np.inf
    while done < epochs:
        np.random.shuffle(order)
        for k in range(n):
            i = order[k]
            if qd[i] <= 0.0:
                continue
            g = y[i] * (X[i] @ w) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                new = min(max(a - g / qd[i], 0.0), C)
                delta = (new - a) * y[i]
                alpha[i] = new
                for j in range(d):
                    w[j] += delta * X[i, j]
        done += 1
        viol = _kkt_violation(X, y, C, alpha, w)
        if viol < tol:
            break
    return done, viol


def _polish(Xa, y, C, tol, alpha, w):
    """Finish the box-constrained dual QP with L-BFGS-B from the current ``alpha``.

    On rank-deficient problems (many more samples than features, large C) the
    dual is flat along whole subspaces and coordinate descent crawls; a
    quasi-Newton pass over all variables at once removes that slow tail.
    """
    Z = Xa * y[:, None]

    def fun(a):
        v = Z.T @ a
        return 0.5 * float(v @ v) - float(a.sum()), Z @ v - 1.0

    res = optimize.minimize(fun, alpha, jac=True, method="L-BFGS-B", bounds=[(0.0, C)] * len(alpha),
                            options={"maxiter": 2000, "gtol": tol * 1e-2, "ftol": 0.0, "maxcor": 30})
    a = np.clip(res.x, 0.0, C)
    # snap near-bound values so the KKT test reads them as bounded
    a[a <= 1e-12 * C] = 0.0
    a[a >= C * (1 - 1e-12)] = C
    alpha[:] = a
    w[:] = (alpha * y) @ Xa


def _dual_cd(X, y, C, tol, max_epochs, order_seed, chunk: int = 10):
    """Dual coordinate descent, polished by L-BFGS-B after every ``chunk`` unconverged epochs."""
    alpha = np.zeros(X.shape[0])
    w = np.zeros(X.shape[1])
    epochs, viol = 0, np.inf
    while epochs < max_epochs:
        done, viol = _cd_epochs(X, y, C, tol, min(chunk, max_epochs - epochs), order_seed + epochs, alpha, w)
        epochs += done
        if viol < tol:
            break
        _polish(X, y, C, tol, alpha, w)
        viol = _kkt_violation(X, y, C, alpha, w)
        if viol < tol:
            break
    return w, alpha, epochs, viol


@dataclass
class BinarySolution:
    weights: np.ndarray
    bias: float
    alpha: np.ndarray
    epochs: int
    kkt_violation: float


def _augment(X, bias_scale):
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.full((X.shape[0], 1), float(bias_scale))])


def train_binary(X, y, C: float, tol: float = 1e-4, max_epochs: int = 1000, seed: int = 0,
                 bias_scale: float | None = None) -> BinarySolution:
    """Soft-margin hinge-loss SVM on labels in {-1, +1}.

    The bias is learned as the weight of a constant extra feature. Its value
    ``bias_scale`` defaults to the largest row norm of ``X``, so scaling ``X``
    by ``k`` and ``C`` by ``1/k**2`` gives the same classifier (for
    L2-normalized rows the constant is simply 1).

    Stops when the largest projected-gradient violation is below ``tol`` or
    after ``max_epochs`` passes in seeded random coordinate order.
    """
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise DataError("binary labels must be -1/+1")
    if len(np.unique(y)) < 2:
        raise DataError("binary SVM needs both classes")
    if not C > 0:
        raise ConfigError(f"C must be > 0, got {C}")
    if bias_scale is None:
        X = np.asarray(X, dtype=np.float64)
        top = float(np.sqrt(np.einsum("ij,ij->i", X, X).max())) if X.size else 0.0
        bias_scale = top if top > 0 else 1.0
    Xa = _augment(X, bias_scale)
    w, alpha, epochs, viol = _dual_cd(Xa, y, float(C), float(tol), int(max_epochs), int(seed))
    if viol >= tol:
        log.debug("dual CD stopped after %d epochs with KKT violation %.2e", epochs, viol)
    return BinarySolution(w[:-1].copy(), float(w[-1] * bias_scale), alpha, int(epochs), float(viol))


@dataclass
class LinearModel:
    weight_vectors: np.ndarray
    biases: np.ndarray
    C: float
    # contiguous label (1..N_c) -> raw dataset label
    class_map: dict[int, int] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return int(self.weight_vectors.shape[0])

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weight_vectors.T + self.biases

    def predict(self, X) -> np.ndarray:
        # argmax keeps the first maximum: ties go to the lower class index
        return np.argmax(self.decision_function(X), axis=1) + 1

    def to_arrays(self, prefix: str = "") -> dict:
        meta = {"format": MODEL_FORMAT, "C": self.C,
                "class_map": {str(k): v for k, v in self.class_map.items()}}
        return {prefix + "weights": self.weight_vectors, prefix + "biases": self.biases,
                prefix + "meta": np.array(json.dumps(meta))}

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> "LinearModel":
        meta = json.loads(str(arrays[prefix + "meta"]))
        if meta.get("format") != MODEL_FORMAT:
            raise DataError(f"unsupported model format {meta.get('format')!r}")
        return cls(np.array(arrays[prefix + "weights"]), np.array(arrays[prefix + "biases"]),
                   float(meta["C"]), {int(k): v for k, v in meta["class_map"].items()})

    def save(self, path) -> None:
        save_npz(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "LinearModel":
        with np.load(path, allow_pickle=False) as z:
            return cls.from_arrays(z)


def train_ova(X, y, C: float, n_classes: int | None = None, seed: int = 0,
              class_map: dict[int, int] | None = None, **kw) -> LinearModel:
    """Train one class-vs-rest problem per label in ``1..n_classes``."""
    y = np.asarray(y, dtype=int)
    n_classes = int(n_classes or y.max())
    if n_classes < 2:
        raise DataError("one-vs-all needs at least 2 classes")
    present = set(np.unique(y).tolist())
    missing = [k for k in range(1, n_classes + 1) if k not in present]
    if missing:
        raise DataError(f"classes {missing} have no training samples")
    W, b = [], []
    for k in range(1, n_classes + 1):
        sol = train_binary(X, np.where(y == k, 1.0, -1.0), C, seed=seed + k, **kw)
        W.append(sol.weights)
        b.append(sol.bias)
    cmap = class_map if class_map is not None else {k: k for k in range(1, n_classes + 1)}
    return LinearModel(np.vstack(W), np.array(b), float(C), dict(cmap))


def stratified_folds(y, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified shuffled folds; the count drops to the smallest class size if needed."""
    y = np.asarray(y)
    counts = np.unique(y, return_counts=True)[1]
    smallest = int(counts.min())
    if smallest < folds:
        if smallest < 2:
            raise DataError(f"a class has {smallest} sample(s); need at least 2 for cross-validation")
        warnings.warn(f"reducing CV folds from {folds} to {smallest} (smallest class size)")
        folds = smallest
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return list(skf.split(np.zeros(len(y)), y))


def cv_accuracy_table(X, y, plan: CvPlan, n_classes: int | None = None) -> np.ndarray:
    """Mean validation accuracy per grid value of C."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    n_classes = int(n_classes or y.max())
    splits = stratified_folds(y, plan.folds, plan.seed)
    acc = np.zeros((len(splits), len(plan.c_grid)))
    for f, (tr, va) in enumerate(splits):
        for j, C in enumerate(plan.c_grid):
            model = train_ova(X[tr], y[tr], C, n_classes, seed=plan.seed)
            acc[f, j] = np.mean(model.predict(X[va]) == y[va])
    return acc.mean(axis=0)


def pick_best(scores, grid):
    """Grid value with the highest score; ties go to the earliest (smallest) one."""
    scores = np.asarray(scores)
    return grid[int(np.flatnonzero(scores == scores.max())[0])]


def select_C(X, y, plan: CvPlan = CvPlan(), n_classes: int | None = None) -> float:
    return float(pick_best(cv_accuracy_table(X, y, plan, n_classes), plan.c_grid))
