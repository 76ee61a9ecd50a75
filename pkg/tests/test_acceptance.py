"""Acceptance criteria 1-6.

Every test records exactly one ``criterion N: PASS|FAIL`` line (shown in the
terminal summary) and then asserts the same outcome. Criteria 3-6 run on UCR
data under ``data/UCR`` and are marked slow; ``INFO`` lines report extra
context such as stand-in datasets and never decide a verdict.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from recurrence_bow import codebook as cbk
from recurrence_bow.baselines import (baseline_1nn_dtw, baseline_1nn_euclidean, dtw_distance)
from recurrence_bow.dsift import dense_descriptors
from recurrence_bow.experiments import compare_runtime, grid_cells, sweep
from recurrence_bow.pipeline import PipelineConfig, describe_images, encode_images, run_experiment, sample_bag
from recurrence_bow.rp import EmbeddingParams, binarize, distance_matrix, embed, encode_series
from recurrence_bow.svm import train_binary
from recurrence_bow.timeseries_io import load_dataset

from test_baselines import brute_force_error, dtw_oracle, make_dataset
from test_codebook import simplex_slice_search
from test_rp import brute_distances
from test_svm import kkt_violations

DATA = Path(__file__).resolve().parents[1] / "data" / "UCR"

# desk-scale codebook sweep for the UCR criteria (the full sweep reaches 8000 words)
DESK_SIZES = (50, 100, 250)
DESK_BAG = 30_000


def have(name):
    return (DATA / name).is_dir()


def verdict(log, n, ok, detail):
    log(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1: properties

def _rp_checks(rng):
    side_ok = sym_ok = True
    for _ in range(200):
        m, tau = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        length = (m - 1) * tau + int(rng.integers(2, 80))
        x = rng.normal(size=length) * rng.uniform(0.1, 10)
        img = encode_series(x, EmbeddingParams(m=m, tau=tau), max_side=None)
        side_ok &= img.side == length - (m - 1) * tau
        sym_ok &= np.array_equal(img.pixels, img.pixels.T)
    return {"RP side K = l-(m-1)tau": side_ok, "RP symmetry": sym_ok}


def _threshold_checks(rng):
    ok = scale_ok = shuffle_ok = True
    for _ in range(50):
        x = rng.normal(size=int(rng.integers(20, 90)))
        p = EmbeddingParams()
        gray = encode_series(x, p, None)
        d = distance_matrix(embed(x, p))
        eps = float(rng.uniform(0.05, 0.95)) * d.max()
        binary = encode_series(x, EmbeddingParams(epsilon=eps), None)
        ok &= np.array_equal(binarize(gray, eps / d.max()).pixels, binary.pixels)
        scale_ok &= np.array_equal(encode_series(x * 2.0 ** int(rng.integers(-8, 8)), p, None).pixels, gray.pixels)
        shuffle_ok &= any(not np.array_equal(encode_series(rng.permutation(x), p, None).pixels, gray.pixels)
                          for _ in range(20))
    return {"binary = thresholded gray": ok, "gray invariant to positive scaling": scale_ok,
            "shuffle changes image": shuffle_ok}


def _descriptor_checks(rng):
    norm_ok = inv_ok = count_ok = True
    for _ in range(10):
        side = int(rng.integers(48, 90))
        img = rng.random((side, side))
        base = dense_descriptors(img)
        norm_ok &= bool(np.all(np.abs(np.linalg.norm(base.vectors, axis=1) - 1) < 1e-9))
        norm_ok &= bool(base.vectors.min() >= 0 and base.vectors.max() <= 1)
        for other in (img + rng.uniform(-3, 3), img * rng.uniform(0.01, 100)):
            inv_ok &= bool(np.abs(dense_descriptors(other).vectors - base.vectors).max() < 1e-9)
        flat_geometry = dense_descriptors(np.full((side, side), 0.5), keep_flat=True)
        count_ok &= len(flat_geometry) == len(dense_descriptors(img, keep_flat=True))
    return {"descriptor unit norm, components in [0,1]": norm_ok,
            "descriptor offset/scale invariance (1e-9)": inv_ok, "descriptor count from geometry only": count_ok}


def _codebook_checks(rng):
    sum_ok = perm_ok = km_ok = pool_ok = proj_ok = True
    for _ in range(50):
        M, knn = int(rng.integers(5, 30)), int(rng.integers(1, 6))
        W = rng.normal(size=(M, 16))
        S = rng.normal(size=(20, 16))
        p = cbk.LlcParams(knn=knn)
        idx, vals = cbk.llc_encode(S, W, p)
        sum_ok &= bool(np.all(np.abs(vals.sum(axis=1) - 1) < 1e-9)) and idx.shape[1] == knn
        c = cbk.llc_code(S[0], W, p)
        sum_ok &= np.count_nonzero(c) <= knn
        perm = rng.permutation(M)
        perm_ok &= bool(np.allclose(cbk.llc_code(S[0], W[perm], p), c[perm], atol=1e-12))
    for seed in range(5):
        X = rng.normal(size=(300, 8))
        a, b = cbk.kmeans(X, 12, seed=seed), cbk.kmeans(X, 12, seed=seed)
        h = a.hyperparameters["inertia_history"]
        km_ok &= all(h[i + 1] <= h[i] + 1e-9 * h[0] for i in range(len(h) - 1))
        km_ok &= a.words.tobytes() == b.words.tobytes()
        codes = [rng.normal(size=12) * (rng.random(12) < 0.3) for _ in range(4)]
        pooled = cbk.pool_image(codes, 12)
        pool_ok &= np.array_equal(pooled, cbk.pool_image(codes[::-1], 12))
        single = cbk.pool_image(codes[:1], 12)
        pool_ok &= bool(np.abs(single - cbk.pool_image([single], 12)).max() <= 1e-12)
        bag = X / np.linalg.norm(X, axis=1, keepdims=True)
        opt = cbk.optimize_codebook(cbk.kmeans(bag, 12, seed=seed), bag, seed=seed)
        proj_ok &= bool(np.linalg.norm(opt.words, axis=1).max() <= 1 + 1e-9)
    return {"LLC sum-to-one (1e-9) and knn sparsity": sum_ok, "LLC permutation equivariance": perm_ok,
            "k-means monotone and seed-deterministic": km_ok, "pooling order invariance, idempotence": pool_ok,
            "optimized words in the unit ball": proj_ok}


def _large_mu_check(rng):
    """Active set at mu_reg = 1e6 within the adaptor-maximal words, on generic unit-norm draws."""
    held = 0
    for _ in range(200):
        W = rng.normal(size=(20, 16))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        S = rng.normal(size=(50, 16))
        S /= np.linalg.norm(S, axis=1, keepdims=True)
        sigma = cbk.estimate_sigma(S, W)
        c = cbk.regularized_code(S[0], W, 1e6, sigma)
        adaptor = cbk.locality_adaptor(S[0], W, sigma)
        held += set(np.flatnonzero(np.abs(c) > 0.01)) <= set(np.flatnonzero(adaptor == adaptor.max()))
    return held


def _svm_checks(rng):
    kkt_ok = scale_ok = True
    for _ in range(20):
        n = int(rng.integers(8, 40))
        X = rng.normal(size=(n, 5))
        y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        y[:2] = (1.0, -1.0)
        C = float(rng.choice([2.0 ** -10, 0.25, 1.0, 16.0]))
        sol = train_binary(X, y, C, max_epochs=5000)
        kkt_ok &= bool(np.all(sol.alpha >= 0) and np.all(sol.alpha <= C))
        kkt_ok &= bool(np.abs(kkt_violations(X, y, C, sol)).max() < 1e-3)
        k = float(rng.choice([0.5, 2.0, 4.0]))
        a, b = train_binary(X, y, C), train_binary(k * X, y, C / k ** 2)
        scale_ok &= np.array_equal(np.sign(X @ a.weights + a.bias), np.sign(k * X @ b.weights + b.bias))
    return {"SVM KKT residual < 1e-3": kkt_ok, "SVM scaling with inverse-square C": scale_ok}


def test_criterion_1_property_suite(acceptance_log, toy, toy_cfg):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    checks = {}
    checks.update(_rp_checks(rng))
    checks.update(_threshold_checks(rng))
    checks.update(_descriptor_checks(rng))
    checks.update(_codebook_checks(rng))
    checks.update(_svm_checks(rng))
    a, b = run_experiment(toy, toy_cfg), run_experiment(toy, toy_cfg)
    checks["end-to-end determinism"] = (a.error_rate, a.confusion) == (b.error_rate, b.confusion)
    cm = np.array(a.confusion)
    checks["error rate = 1 - trace/N"] = a.error_rate == 1 - np.trace(cm) / cm.sum()
    held = _large_mu_check(rng)
    checks["mu_reg=1e6 active set within adaptor-maximal words"] = held == 200
    for name, ok in checks.items():
        acceptance_log(f"INFO criterion 1 [{'ok' if ok else 'FAILED'}] {name}")
    acceptance_log(f"INFO criterion 1 large-mu subset held on {held}/200 generic draws")
    failed = [k for k, ok in checks.items() if not ok]
    verdict(acceptance_log, 1, not failed,
            f"{len(checks) - len(failed)}/{len(checks)} invariant groups hold"
            + (f"; failing: {', '.join(failed)}" if failed else "")
            + f" ({time.perf_counter() - t0:.0f}s)")


# ---------------------------------------------------------------- 2: oracles

def test_criterion_2_oracle_equivalence(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    llc_gap = 0.0
    for _ in range(10):
        W = rng.normal(size=(5, 4))
        s = rng.normal(size=4)
        c = cbk.llc_code(s, W, cbk.LlcParams(knn=3))
        nn = np.argsort(((W - s) ** 2).sum(axis=1), kind="stable")[:3]
        llc_gap = max(llc_gap, float(np.abs(c[nn] - simplex_slice_search(s, W[nn])).max()))
    dist_exact = all(np.array_equal(distance_matrix(st, norm), brute_distances(st, norm))
                     for st in (rng.normal(size=(int(rng.integers(2, 30)), int(rng.integers(1, 5)))) for _ in range(10))
                     for norm in ("euclidean", "manhattan", "chebyshev"))
    dtw_exact = dtw_distance([1, 2, 3], [1, 2, 2, 3]) == 0.0 and dtw_distance([1, 3, 4], [1, 2, 3, 5]) == 2.0
    series = [(rng.normal(size=15) + lab, lab) for lab in rng.integers(1, 4, size=10)]
    queries = [(rng.normal(size=15) + lab, lab) for lab in rng.integers(1, 4, size=10)]
    d = make_dataset(series, queries)
    nn_exact = (baseline_1nn_euclidean(d) == brute_force_error(
        d, lambda a, b: math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))
        and baseline_1nn_dtw(d) == brute_force_error(d, dtw_oracle)
        and baseline_1nn_dtw(d, 0.2) == brute_force_error(d, lambda a, b: dtw_oracle(a, b, 3)))
    ok = llc_gap <= 1e-3 and dist_exact and dtw_exact and nn_exact
    verdict(acceptance_log, 2, ok,
            f"LLC vs simplex grid max gap {llc_gap:.1e} (<= 1e-3), distance matrix exact={dist_exact}, "
            f"DTW hand tables exact={dtw_exact}, 1-NN vs loops exact={nn_exact} ({time.perf_counter() - t0:.0f}s)")


# ---------------------------------------------------------------- 3: optimization helps

def _reconstruction_table(name, bag_size, sizes=DESK_SIZES, seeds=(0, 1, 2)):
    d = load_dataset(DATA, name)
    cfg = PipelineConfig(codebook_size=sizes[0])
    train = describe_images(encode_images(d.train, cfg), cfg)
    # held-out descriptors come from test images, never seen by the codebook
    held = sample_bag(describe_images(encode_images(d.test, cfg), cfg), 20_000, 10_000)
    rows = []
    for seed in seeds:
        bag = sample_bag(train, bag_size, seed)
        for M in sizes:
            init = cbk.kmeans(bag, M, seed=seed)
            opt = cbk.optimize_codebook(init, bag, seed=seed)
            rows.append((seed, M, bag.shape[0], cbk.reconstruction_error(held, init),
                         cbk.reconstruction_error(held, opt)))
    return rows


@pytest.mark.slow
def test_criterion_3_optimized_codebook_reconstructs_better(acceptance_log):
    t0 = time.perf_counter()
    outcomes = {}
    for name, bag in (("ECG200", 200_000), ("Coffee", DESK_BAG)):
        if not have(name):
            acceptance_log(f"INFO criterion 3 {name}: dataset not found under {DATA}")
            continue
        rows = _reconstruction_table(name, bag)
        for seed, M, n, e0, e1 in rows:
            acceptance_log(f"INFO criterion 3 {name} seed={seed} M={M} bag={n}: "
                           f"initial {e0:.5f} optimized {e1:.5f} {'ok' if e1 <= e0 else 'WORSE'}")
        outcomes[name] = sum(e1 <= e0 for *_, e0, e1 in rows), len(rows)
    ok = any(good == total for good, total in outcomes.values())
    summary = ", ".join(f"{k}: {g}/{t} (M, seed) pairs not worse" for k, (g, t) in outcomes.items())
    verdict(acceptance_log, 3, ok, (summary or "no dataset available") + f" ({time.perf_counter() - t0:.0f}s)")


# ---------------------------------------------------------------- 4: table reproduction

PUBLISHED_ERRORS = {"Coffee": 0.0, "GunPoint": 0.0, "ECG200": 0.108, "CBF": 0.018}


@pytest.mark.slow
def test_criterion_4_small_dataset_error_rates(acceptance_log):
    t0 = time.perf_counter()
    cfg = PipelineConfig(codebook_sweep=DESK_SIZES, bag_size=DESK_BAG)
    in_band, beats, missing = [], [], []
    for name, published in PUBLISHED_ERRORS.items():
        if not have(name):
            missing.append(name)
            continue
        d = load_dataset(DATA, name)
        r = run_experiment(d, cfg)
        ed = baseline_1nn_euclidean(d)
        in_band.append(abs(r.error_rate - published) <= 0.10)
        beats.append(r.error_rate < ed)
        acceptance_log(f"INFO criterion 4 {name}: BoR {100 * r.error_rate:.1f}% (published {100 * published:.1f}%, "
                       f"M={r.selected_M}, C={r.selected_C:.3g}), 1-NN ED {100 * ed:.1f}%, "
                       f"{sum(r.stage_seconds.values()):.0f}s")
    ok = not missing and all(in_band) and sum(beats) >= 3
    verdict(acceptance_log, 4, ok,
            f"{sum(in_band)}/{len(PUBLISHED_ERRORS)} within 10 points of the published errors, BoR beats 1-NN ED on "
            f"{sum(beats)}/{len(PUBLISHED_ERRORS)} (need 3)" + (f"; missing {missing}" if missing else "")
            + f" ({time.perf_counter() - t0:.0f}s)")


# ---------------------------------------------------------------- 5 and 6: TwoLeadECG

SENSITIVITY_GRAY = ((1, 5), (6, 1), (6, 4), (6, 5), (3, 4))
SENSITIVITY_BINARY = (0.3, 0.5)


def _sensitivity(d):
    cfg = PipelineConfig(codebook_size=DESK_SIZES[0])
    gray = [c for m, tau in SENSITIVITY_GRAY for c in grid_cells((m,), (tau,), (None,), False, DESK_SIZES)]
    binary = grid_cells((3,), (4,), SENSITIVITY_BINARY, True, DESK_SIZES)
    reports = sweep(d, cfg, gray + binary)
    best_gray = max((r.accuracy for r in reports[:len(gray)] if r.status == "ok"), default=0.0)
    best_binary = {e: max((r.accuracy for r in reports[len(gray):] if r.status == "ok" and r.cell["epsilon"] == e),
                          default=0.0) for e in SENSITIVITY_BINARY}
    return best_gray, best_binary, reports


def _runtime_shape(d):
    table = compare_runtime(d, PipelineConfig(codebook_size=100))
    llc = table["bor_llc"]
    stages = {k: v for k, v in llc.items() if k not in ("total", "error_rate")}
    ratio = table["bor_plain"]["total"] / table["bof_1d"]["total"]
    return max(stages, key=stages.get) == "llc_optimize", ratio, table


STAND_IN = "ECGFiveDays"


@pytest.mark.slow
def test_criterion_5_sensitivity_shape(acceptance_log):
    t0 = time.perf_counter()
    if have(STAND_IN):
        g, b, _ = _sensitivity(load_dataset(DATA, STAND_IN))
        acceptance_log(f"INFO criterion 5 stand-in {STAND_IN} (informational only): best gray {100 * g:.1f}%, "
                       + ", ".join(f"binary eps={e}*max {100 * v:.1f}%" for e, v in b.items()))
    if not have("TwoLeadECG"):
        verdict(acceptance_log, 5, False, f"TwoLeadECG not found under {DATA}; criterion cannot be evaluated")
    g, b, _ = _sensitivity(load_dataset(DATA, "TwoLeadECG"))
    ok = g >= 0.88 and all(v < g for v in b.values())
    verdict(acceptance_log, 5, ok, f"best gray {100 * g:.1f}% (need >= 88%), "
            + ", ".join(f"binary eps={e}*max {100 * v:.1f}%" for e, v in b.items())
            + f" ({time.perf_counter() - t0:.0f}s)")


@pytest.mark.slow
def test_criterion_6_runtime_shape(acceptance_log):
    t0 = time.perf_counter()
    if have(STAND_IN):
        top, ratio, table = _runtime_shape(load_dataset(DATA, STAND_IN))
        acceptance_log(f"INFO criterion 6 stand-in {STAND_IN} (informational only): LLC largest stage={top}, "
                       f"plain/1D-BoF total ratio {ratio:.2f}, totals "
                       + ", ".join(f"{k} {v['total']:.1f}s" for k, v in table.items()))
    if not have("TwoLeadECG"):
        verdict(acceptance_log, 6, False, f"TwoLeadECG not found under {DATA}; criterion cannot be evaluated")
    top, ratio, table = _runtime_shape(load_dataset(DATA, "TwoLeadECG"))
    ok = top and 0.5 <= ratio <= 2.0
    verdict(acceptance_log, 6, ok, f"LLC optimization is the largest BoR-with-LLC stage: {top}; "
            f"BoR-without-LLC / 1D-BoF total time {ratio:.2f} (need within 2x) ({time.perf_counter() - t0:.0f}s)")
