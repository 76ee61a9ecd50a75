"""End-to-end bag-of-recurrence-patterns classifier.

series -> recurrence image -> dense SIFT -> codebook (k-means, then optional
LLC optimization) -> LLC codes -> max-pooled feature -> one-vs-all linear SVM.

Everything that is fitted (codebook, codebook size, C) sees training series
only; the test split is encoded and classified at the very end.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import codebook as cbk
from .dsift import DESCRIPTOR_DIMS, PatchGridParams, dense_descriptors
from .errors import BorError, ConfigError, DataError
from .rp import EmbeddingParams, encode_series
from .serialization import load_npz, save_npz
from .svm import CvPlan, LinearModel, cv_accuracy_table, stratified_folds, train_ova
from .timeseries_io import Dataset, znormalize

log = logging.getLogger(__name__)

DEFAULT_CODEBOOK_SIZES = (50, 100, 250, 500, 1000, 2000, 4000, 8000)
STAGES = ("encode", "describe", "codebook", "llc_optimize", "code_pool", "svm")
MODEL_FORMAT = "recurrence_bow.trained_model/1"
REPORT_FORMAT = "recurrence_bow.report/1"


@dataclass(frozen=True)
class PipelineConfig:
    embedding: EmbeddingParams = field(default_factory=EmbeddingParams)
    grid: PatchGridParams = field(default_factory=PatchGridParams)
    llc: cbk.LlcParams = field(default_factory=cbk.LlcParams)
    codebook_size: int | None = None
    # leaving both unset selects the full size sweep
    codebook_sweep: tuple[int, ...] | None = None
    cv: CvPlan = field(default_factory=CvPlan)
    seed: int = 0
    max_side: int = 300
    llc_optimize: bool = True
    pooling: str = "abs"
    bag_size: int = 200_000
    kmeans_iters: int = 50
    passes: int = 1
    znormalize: bool = False

    def __post_init__(self):
        if self.codebook_size is None and self.codebook_sweep is None:
            object.__setattr__(self, "codebook_sweep", DEFAULT_CODEBOOK_SIZES)
        if self.codebook_sweep is not None:
            object.__setattr__(self, "codebook_sweep", tuple(int(m) for m in self.codebook_sweep))
        if self.codebook_size is not None and self.codebook_sweep is not None:
            raise ConfigError("set only one of codebook_size and codebook_sweep")
        sizes = self.sizes
        if not sizes or min(sizes) < 2:
            raise ConfigError(f"codebook sizes must be >= 2, got {sizes}")
        if self.llc.knn > min(sizes):
            raise ConfigError(f"knn={self.llc.knn} exceeds the smallest codebook size {min(sizes)}")
        if self.pooling not in cbk.POOLING_MODES:
            raise ConfigError(f"pooling must be one of {cbk.POOLING_MODES}")
        if self.bag_size < 1 or self.kmeans_iters < 1 or self.passes < 1:
            raise ConfigError("bag_size, kmeans_iters and passes must be >= 1")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.codebook_size,) if self.codebook_size is not None else self.codebook_sweep

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"]["patch_sizes"] = list(self.grid.patch_sizes)
        d["cv"]["c_grid"] = list(self.cv.c_grid)
        if self.codebook_sweep is not None:
            d["codebook_sweep"] = list(self.codebook_sweep)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["embedding"] = EmbeddingParams(**d["embedding"])
        d["grid"] = PatchGridParams(**d["grid"])
        d["llc"] = cbk.LlcParams(**d["llc"])
        d["cv"] = CvPlan(**d["cv"])
        return cls(**d)

    def with_size(self, M: int) -> "PipelineConfig":
        return replace(self, codebook_size=int(M), codebook_sweep=None)


class StageTimer:
    """Accumulates wall-clock seconds per pipeline stage."""

    def __init__(self):
        self.seconds = {s: 0.0 for s in STAGES}

    @contextmanager
    def __call__(self, stage: str):
        t0 = time.perf_counter()
        try:
            yield
        except BorError as exc:
            if exc.stage is None:
                exc.stage = stage
            raise
        finally:
            self.seconds[stage] = self.seconds.get(stage, 0.0) + time.perf_counter() - t0

    def total(self) -> float:
        return float(sum(self.seconds.values()))


# ---------------------------------------------------------------- features

def encode_images(series, cfg: PipelineConfig):
    out = []
    for s in series:
        if cfg.znormalize:
            s = znormalize(s)
        out.append(encode_series(s, cfg.embedding, cfg.max_side))
    return out


def describe_images(images, cfg: PipelineConfig):
    return [dense_descriptors(img, cfg.grid) for img in images]


def sample_bag(desc_sets, bag_size: int, seed: int) -> np.ndarray:
    """Uniform sample without replacement over all descriptors of the given images."""
    nonempty = [d.vectors for d in desc_sets if len(d)]
    if not nonempty:
        raise DataError("no descriptors in the training images (all patches flat?)")
    pool = np.vstack(nonempty)
    if pool.shape[0] <= bag_size:
        return pool
    rng = np.random.default_rng(seed)
    return pool[np.sort(rng.choice(pool.shape[0], bag_size, replace=False))]


def learn_codebook(bag, M: int, cfg: PipelineConfig, timer: StageTimer | None = None) -> cbk.Codebook:
    timer = timer or StageTimer()
    with timer("codebook"):
        book = cbk.kmeans(bag, M, cfg.kmeans_iters, seed=cfg.seed)
    if cfg.llc_optimize:
        with timer("llc_optimize"):
            book = cbk.optimize_codebook(book, bag, cfg.llc, seed=cfg.seed, passes=cfg.passes)
    return book


def pooled_features(desc_sets, book: cbk.Codebook, cfg: PipelineConfig) -> np.ndarray:
    """One pooled, L2-normalized code vector per image (rows)."""
    F = np.zeros((len(desc_sets), book.M))
    for i, ds in enumerate(desc_sets):
        if len(ds) == 0:
            continue
        idx, vals = cbk.llc_encode(ds.vectors, book, cfg.llc)
        F[i] = cbk.pool_sparse(idx, vals, book.M, cfg.pooling)
    return F


# ---------------------------------------------------------------- model

@dataclass
class TrainedModel:
    config: PipelineConfig
    codebook: cbk.Codebook
    classifier: LinearModel
    # raw dataset label -> contiguous label
    label_map: dict[int, int]
    selection: dict = field(default_factory=dict)

    def save(self, path) -> None:
        arrays = {}
        arrays.update(self.codebook.to_arrays("codebook_"))
        arrays.update(self.classifier.to_arrays("svm_"))
        meta = {"format": MODEL_FORMAT, "config": self.config.to_dict(),
                "label_map": {str(k): v for k, v in self.label_map.items()},
                "selection": self.selection}
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
        save_npz(path, arrays)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        z = load_npz(path)
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != MODEL_FORMAT:
            raise DataError(f"unsupported model format {meta.get('format')!r}")
        return cls(PipelineConfig.from_dict(meta["config"]), cbk.Codebook.from_arrays(z, "codebook_"),
                   LinearModel.from_arrays(z, "svm_"),
                   {int(k): v for k, v in meta["label_map"].items()}, meta["selection"])

    def features(self, series, timer: StageTimer | None = None) -> np.ndarray:
        timer = timer or StageTimer()
        with timer("encode"):
            images = encode_images(series, self.config)
        with timer("describe"):
            descs = describe_images(images, self.config)
        with timer("code_pool"):
            return pooled_features(descs, self.codebook, self.config)

    def predict(self, series, timer: StageTimer | None = None, descs: list | None = None) -> np.ndarray:
        timer = timer or StageTimer()
        if descs is None:
            F = self.features(series, timer)
        else:
            with timer("code_pool"):
                F = pooled_features(descs, self.codebook, self.config)
        with timer("svm"):
            return self.classifier.predict(F)


def _labels(series) -> np.ndarray:
    return np.array([s.label for s in series], dtype=int)


def select_size_and_C(descs, y, n_classes: int, cfg: PipelineConfig, timer: StageTimer):
    """Joint (M, C) choice from one stratified k-fold loop over training images.

    For every fold and codebook size the codebook is learned on the fold's
    training images only. Ties prefer the smaller M, then the smaller C.
    """
    splits = stratified_folds(y, cfg.cv.folds, cfg.cv.seed)
    sizes = cfg.sizes
    acc = np.zeros((len(sizes), len(cfg.cv.c_grid)))
    for tr, va in splits:
        with timer("codebook"):
            bag = sample_bag([descs[i] for i in tr], cfg.bag_size, cfg.seed)
        for a, M in enumerate(sizes):
            if M > bag.shape[0]:
                acc[a] = -np.inf
                continue
            book = learn_codebook(bag, M, cfg, timer)
            with timer("code_pool"):
                F = pooled_features(descs, book, cfg)
            with timer("svm"):
                for b, C in enumerate(cfg.cv.c_grid):
                    model = train_ova(F[tr], y[tr], C, n_classes, seed=cfg.seed)
                    acc[a, b] += np.mean(model.predict(F[va]) == y[va]) / len(splits)
    if not np.isfinite(acc.max()):
        raise DataError("every candidate codebook size exceeds the descriptor bag")
    flat = int(np.flatnonzero(acc.ravel() == acc.max())[0])
    a, b = divmod(flat, acc.shape[1])
    return sizes[a], cfg.cv.c_grid[b], acc


def fit(train: list, n_classes: int, cfg: PipelineConfig, label_map: dict | None = None,
        timer: StageTimer | None = None, descs: list | None = None) -> TrainedModel:
    """Fit the full pipeline on training series.

    ``descs`` may hold the training descriptor sets already computed with the
    same embedding and grid; encoding and description are then skipped.
    """
    timer = timer or StageTimer()
    y = _labels(train)
    if descs is None:
        with timer("encode"):
            images = encode_images(train, cfg)
        with timer("describe"):
            descs = describe_images(images, cfg)

    selection: dict = {}
    if len(cfg.sizes) > 1:
        M, C, table = select_size_and_C(descs, y, n_classes, cfg, timer)
        selection["cv_accuracy"] = table.tolist()
    else:
        M = cfg.sizes[0]
    with timer("codebook"):
        bag = sample_bag(descs, cfg.bag_size, cfg.seed)
        if M > bag.shape[0]:
            raise DataError(f"codebook size {M} exceeds the {bag.shape[0]} training descriptors")
    book = learn_codebook(bag, M, cfg, timer)
    with timer("code_pool"):
        F = pooled_features(descs, book, cfg)
    with timer("svm"):
        if len(cfg.sizes) == 1:
            if len(cfg.cv.c_grid) > 1:
                scores = cv_accuracy_table(F, y, cfg.cv, n_classes)
                C = cfg.cv.c_grid[int(np.flatnonzero(scores == scores.max())[0])]
                selection["cv_accuracy"] = [scores.tolist()]
            else:
                C = cfg.cv.c_grid[0]
        inv = {v: k for k, v in (label_map or {}).items()}
        clf = train_ova(F, y, C, n_classes, seed=cfg.seed, class_map=inv or None)
        train_pred = clf.predict(F)
    selection.update({"M": int(M), "C": float(C), "sizes": list(cfg.sizes), "c_grid": list(cfg.cv.c_grid),
                      "bag_size": int(bag.shape[0]),
                      "train_error_rate": float(np.mean(train_pred != y))})
    return TrainedModel(replace(cfg), book, clf, dict(label_map or {}), selection)


# ---------------------------------------------------------------- reports

@dataclass
class ExperimentReport:
    dataset: str
    config: dict
    seed: int
    status: str = "ok"
    error: str | None = None
    error_rate: float | None = None
    confusion: list | None = None
    stage_seconds: dict = field(default_factory=dict)
    selected_M: int | None = None
    selected_C: float | None = None
    train_error_rate: float | None = None
    baselines: dict = field(default_factory=dict)
    cell: dict = field(default_factory=dict)
    n_train: int = 0
    n_test: int = 0

    @property
    def accuracy(self) -> float | None:
        return None if self.error_rate is None else 1.0 - self.error_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(truth) - 1, np.asarray(pred) - 1), 1)
    return cm


def evaluate(model: TrainedModel, test: list, n_classes: int, timer: StageTimer | None = None,
             descs: list | None = None):
    pred = model.predict(test, timer, descs)
    cm = confusion_matrix(_labels(test), pred, n_classes)
    return 1.0 - np.trace(cm) / max(len(test), 1), cm


def run_experiment(d: Dataset, cfg: PipelineConfig, baselines: tuple[str, ...] = (),
                   cell: dict | None = None) -> ExperimentReport:
    """Train on ``d.train``, evaluate on ``d.test`` and time every stage."""
    timer = StageTimer()
    report = ExperimentReport(dataset=d.name, config=cfg.to_dict(), seed=cfg.seed, cell=dict(cell or {}),
                              n_train=len(d.train), n_test=len(d.test))
    model = fit(d.train, d.class_count, cfg, d.label_map, timer)
    err, cm = evaluate(model, d.test, d.class_count, timer)
    report.error_rate = float(err)
    report.confusion = cm.tolist()
    report.selected_M = model.selection["M"]
    report.selected_C = model.selection["C"]
    report.train_error_rate = model.selection["train_error_rate"]
    report.stage_seconds = dict(timer.seconds)
    if baselines:
        from .baselines import baseline_1nn_dtw, baseline_1nn_euclidean

        for name in baselines:
            if name == "1nn_euclidean":
                report.baselines[name] = baseline_1nn_euclidean(d)
            elif name == "1nn_dtw":
                report.baselines[name] = baseline_1nn_dtw(d)
            elif name.startswith("1nn_dtw_"):
                report.baselines[name] = baseline_1nn_dtw(d, float(name.rsplit("_", 1)[1]))
            else:
                raise ConfigError(f"unknown baseline {name!r}")
    return report


__all__ = [
    "DEFAULT_CODEBOOK_SIZES", "STAGES", "DESCRIPTOR_DIMS", "PipelineConfig", "StageTimer", "TrainedModel",
    "ExperimentReport", "encode_images", "describe_images", "sample_bag", "learn_codebook",
    "pooled_features", "select_size_and_C", "fit", "evaluate", "run_experiment", "confusion_matrix",
]
