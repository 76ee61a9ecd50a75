"""Parameter sweeps and the stage-runtime comparison."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import replace

import numpy as np

from . import codebook as cbk
from .dsift import DescriptorSet
from .errors import BorError, ConfigError
from .pipeline import (STAGES, ExperimentReport, PipelineConfig, StageTimer, describe_images, encode_images,
                       evaluate, fit, learn_codebook, pooled_features, sample_bag)
from .rp import EmbeddingParams
from .svm import cv_accuracy_table, train_ova
from .timeseries_io import Dataset

log = logging.getLogger(__name__)

CELL_KEYS = ("m", "tau", "epsilon", "relative_epsilon", "M")


def grid_cells(m=(3,), tau=(4,), epsilon=(None,), relative_epsilon=False, M=(None,)) -> list[dict]:
    """Cartesian product of the given axes as a list of cell dicts."""
    return [{"m": int(a), "tau": int(b), "epsilon": e, "relative_epsilon": bool(relative_epsilon),
             "M": None if k is None else int(k)}
            for a, b, e, k in itertools.product(m, tau, epsilon, M)]


def cell_config(cfg: PipelineConfig, cell: dict) -> PipelineConfig:
    unknown = set(cell) - set(CELL_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
    emb = cfg.embedding
    emb = EmbeddingParams(m=cell.get("m", emb.m), tau=cell.get("tau", emb.tau),
                          epsilon=cell.get("epsilon", emb.epsilon),
                          relative_epsilon=cell.get("relative_epsilon", emb.relative_epsilon), norm=emb.norm)
    out = replace(cfg, embedding=emb)
    if cell.get("M") is not None:
        out = out.with_size(cell["M"])
    return out


def sweep(d: Dataset, cfg: PipelineConfig, cells: list[dict]) -> list[ExperimentReport]:
    """One report per cell, all with ``cfg.seed``.

    Images and descriptors are computed once per distinct embedding and
    reused by every codebook size; the encode/describe seconds of that shared
    work are copied into each report of the group. A cell whose embedding is
    invalid for the data (e.g. K < 2 states) is reported with status
    ``"error"`` instead of aborting the sweep.
    """
    if not cells:
        raise ConfigError("sweep needs at least one cell")
    reports: list[ExperimentReport] = []
    cache: dict = {}
    for cell in cells:
        report = ExperimentReport(dataset=d.name, config={}, seed=cfg.seed, cell=dict(cell),
                                  n_train=len(d.train), n_test=len(d.test))
        try:
            c = cell_config(cfg, cell)
            report.config = c.to_dict()
            key = (c.embedding, c.grid, c.max_side, c.znormalize)
            if key not in cache:
                t = StageTimer()
                with t("encode"):
                    tr_img, te_img = encode_images(d.train, c), encode_images(d.test, c)
                with t("describe"):
                    cache[key] = (describe_images(tr_img, c), describe_images(te_img, c),
                                  {s: t.seconds[s] for s in ("encode", "describe")})
            tr_desc, te_desc, shared = cache[key]
            timer = StageTimer()
            timer.seconds.update(shared)
            model = fit(d.train, d.class_count, c, d.label_map, timer, descs=tr_desc)
            err, cm = evaluate(model, d.test, d.class_count, timer, descs=te_desc)
            report.error_rate = float(err)
            report.confusion = cm.tolist()
            report.selected_M = model.selection["M"]
            report.selected_C = model.selection["C"]
            report.train_error_rate = model.selection["train_error_rate"]
            report.stage_seconds = dict(timer.seconds)
        except BorError as exc:
            log.warning("sweep cell %s failed: %s", cell, exc)
            report.status = "error"
            report.error = str(exc)
        reports.append(report)
    return reports


# ---------------------------------------------------------------- runtime

def segment_features(x, window: int, stride: int) -> np.ndarray:
    """(mean, variance, least-squares slope) of each sliding window."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        return np.empty((0, 3))
    starts = np.arange(0, len(x) - window + 1, stride)
    seg = x[starts[:, None] + np.arange(window)[None, :]]
    t = np.arange(window) - (window - 1) / 2.0
    slope = seg @ t / (t @ t)
    return np.column_stack([seg.mean(axis=1), seg.var(axis=1), slope])


def _svm_stage(F, y, n_classes, cfg):
    if len(cfg.cv.c_grid) > 1:
        scores = cv_accuracy_table(F, y, cfg.cv, n_classes)
        C = cfg.cv.c_grid[int(np.flatnonzero(scores == scores.max())[0])]
    else:
        C = cfg.cv.c_grid[0]
    return train_ova(F, y, C, n_classes, seed=cfg.seed)


def _bor_tail(book, tr_desc, te_desc, y, yte, n_classes, cfg, timer):
    with timer("code_pool"):
        Ftr = pooled_features(tr_desc, book, cfg)
        Fte = pooled_features(te_desc, book, cfg)
    with timer("svm"):
        clf = _svm_stage(Ftr, y, n_classes, cfg)
        err = float(np.mean(clf.predict(Fte) != yte))
    return err


def bof_1d(d: Dataset, cfg: PipelineConfig, timer: StageTimer) -> float:
    """Segment-statistics bag of features on the raw series; returns the test error."""
    M = cfg.sizes[0]
    window, stride = min(cfg.grid.patch_sizes), cfg.grid.stride
    with timer("describe"):
        tr = [DescriptorSet(segment_features(s.values, window, stride)) for s in d.train]
        te = [DescriptorSet(segment_features(s.values, window, stride)) for s in d.test]
    bag = sample_bag(tr, cfg.bag_size, cfg.seed)
    with timer("codebook"):
        book = cbk.kmeans(bag, M, cfg.kmeans_iters, seed=cfg.seed)
    y = np.array([s.label for s in d.train])
    yte = np.array([s.label for s in d.test])
    return _bor_tail(book, tr, te, y, yte, d.class_count, replace(cfg, llc_optimize=False), timer)


def compare_runtime(d: Dataset, cfg: PipelineConfig) -> dict[str, dict]:
    """Stage seconds (plus ``total`` and test ``error_rate``) of three pipelines.

    ``bor_llc`` and ``bor_plain`` share the recurrence encoding, descriptors
    and k-means codebook, so they report the same seconds for those stages;
    only the optimization, coding and SVM stages are run per variant.
    ``bof_1d`` is the segment-statistics control with the same codebook size
    and SVM machinery.
    """
    if len(cfg.sizes) != 1:
        raise ConfigError("compare_runtime needs a single codebook size")
    M = cfg.sizes[0]
    y = np.array([s.label for s in d.train])
    yte = np.array([s.label for s in d.test])

    shared = StageTimer()
    with shared("encode"):
        tr_img, te_img = encode_images(d.train, cfg), encode_images(d.test, cfg)
    with shared("describe"):
        tr_desc, te_desc = describe_images(tr_img, cfg), describe_images(te_img, cfg)
    bag = sample_bag(tr_desc, cfg.bag_size, cfg.seed)
    kmeans_cfg = replace(cfg, llc_optimize=False)
    initial = learn_codebook(bag, M, kmeans_cfg, shared)

    out = {}
    for name, optimize in (("bor_llc", True), ("bor_plain", False)):
        timer = StageTimer()
        timer.seconds.update({s: shared.seconds[s] for s in ("encode", "describe", "codebook")})
        book = initial
        if optimize:
            with timer("llc_optimize"):
                book = cbk.optimize_codebook(initial, bag, cfg.llc, seed=cfg.seed, passes=cfg.passes)
        err = _bor_tail(book, tr_desc, te_desc, y, yte, d.class_count, cfg, timer)
        out[name] = dict(timer.seconds, total=timer.total(), error_rate=err)

    timer = StageTimer()
    err = bof_1d(d, cfg, timer)
    out["bof_1d"] = dict(timer.seconds, total=timer.total(), error_rate=err)
    return out


def write_runtime_csv(table: dict[str, dict], path) -> None:
    cols = list(STAGES) + ["total", "error_rate"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant"] + cols)
        for name, row in table.items():
            w.writerow([name] + [repr(float(row.get(c, 0.0))) for c in cols])
