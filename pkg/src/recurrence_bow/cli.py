"""Command-line entry point: ``bor <command> [options]``.

Settings are resolved in three layers: built-in defaults, then a plain
``key = value`` config file (``--config``; keys may be prefixed with a
dataset name, e.g. ``Coffee.codebook_size = 100``, to apply to that dataset
only), then command-line flags, which always win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import baseline_1nn_dtw, baseline_1nn_euclidean
from .codebook import LlcParams
from .dsift import PatchGridParams
from .errors import BorError, ConfigError
from .experiments import compare_runtime, grid_cells, sweep, write_runtime_csv
from .pipeline import PipelineConfig, TrainedModel, evaluate, fit, run_experiment
from .reporting import write_json, write_reports_csv
from .rp import EmbeddingParams, encode_series, export_image
from .svm import CvPlan
from .timeseries_io import load_dataset

log = logging.getLogger("recurrence_bow")

DEFAULT_DATA_ROOT = "data/UCR"

# config-file key -> (argparse dest, parser)
_INT_LIST = lambda s: [int(v) for v in str(s).split(",") if v.strip()]  # noqa: E731
_FLOAT_LIST = lambda s: [float(v) for v in str(s).split(",") if v.strip()]  # noqa: E731
_OPT_FLOAT_LIST = lambda s: [None if v.strip().lower() in ("none", "") else float(v)  # noqa: E731
                             for v in str(s).split(",")]


def _bool(s) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


CONFIG_KEYS = {
    "data_root": str, "m": _INT_LIST, "tau": _INT_LIST, "epsilon": _OPT_FLOAT_LIST,
    "relative_epsilon": _bool, "patch_sizes": _INT_LIST, "stride": int, "codebook_size": int,
    "codebook_sweep": _INT_LIST, "knn": int, "mu_reg": float, "sigma": float, "no_llc_opt": _bool,
    "c_grid": _FLOAT_LIST, "folds": int, "seed": int, "bag_size": int, "max_side": int,
    "pooling": str, "znormalize": _bool,
}


def read_config_file(path, dataset: str | None = None) -> dict:
    """Parse ``key = value`` lines; dataset-prefixed keys override plain ones."""
    plain, scoped = {}, {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        target = plain
        if "." in key:
            ds, key = key.split(".", 1)
            if ds != dataset:
                continue
            target = scoped
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            target[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    plain.update(scoped)
    return plain


def _single(values, name):
    if values is None:
        return None
    if isinstance(values, (list, tuple)):
        if len(values) != 1:
            raise ConfigError(f"--{name} takes one value for this command (got {values}); use 'sweep' for grids")
        return values[0]
    return values


def resolve_settings(args) -> dict:
    settings = read_config_file(args.config, args.dataset) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            settings[key] = v
    return settings


def build_config(s: dict) -> PipelineConfig:
    """PipelineConfig from resolved settings, where m/tau/epsilon are single values."""
    emb = EmbeddingParams(m=_single(s.get("m"), "m") or 3, tau=_single(s.get("tau"), "tau") or 4,
                          epsilon=_single(s.get("epsilon"), "epsilon"),
                          relative_epsilon=bool(s.get("relative_epsilon", False)))
    grid = PatchGridParams(**{k: (tuple(s[k]) if k == "patch_sizes" else s[k])
                              for k in ("patch_sizes", "stride") if k in s})
    llc = LlcParams(**{k: s[k] for k in ("knn", "mu_reg", "sigma") if k in s})
    cv_kw = {"seed": s.get("seed", 0)}
    if "folds" in s:
        cv_kw["folds"] = s["folds"]
    if "c_grid" in s:
        cv_kw["c_grid"] = tuple(s["c_grid"])
    kw = dict(embedding=emb, grid=grid, llc=llc, cv=CvPlan(**cv_kw), seed=s.get("seed", 0),
              llc_optimize=not s.get("no_llc_opt", False))
    for k in ("bag_size", "max_side", "pooling", "znormalize"):
        if k in s:
            kw[k] = s[k]
    if "codebook_size" in s:
        kw.update(codebook_size=s["codebook_size"], codebook_sweep=None)
    elif "codebook_sweep" in s:
        kw["codebook_sweep"] = tuple(s["codebook_sweep"])
    return PipelineConfig(**kw)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, s, include_test=True):
    if not args.dataset:
        raise ConfigError("--dataset is required")
    return load_dataset(s.get("data_root", DEFAULT_DATA_ROOT), args.dataset, include_test=include_test)


# ---------------------------------------------------------------- commands

def cmd_encode(args, s):
    from .plotting import plot_images

    d = _load(args, s)
    cfg = build_config(s)
    out = _out_dir(args)
    fmt = args.export_images or "pgm"
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    rows, panel, titles = [], [], []
    for split, series in (("train", d.train), ("test", d.test)):
        for ts in series:
            img = encode_series(ts, cfg.embedding, cfg.max_side)
            name = f"{split}_{ts.id}.{fmt}"
            export_image(img, img_dir / name, fmt)
            rows.append({"split": split, "id": ts.id, "label": d.inverse_label_map[ts.label],
                         "side": img.side, "file": f"images/{name}"})
            if len(panel) < 8:
                panel.append(img)
                titles.append(f"{split} {ts.id} (class {d.inverse_label_map[ts.label]})")
    _write_table(rows, out / f"encode_index.{args.format}", args.format)
    plot_images(panel, out / "encode_panel.png", titles)
    return {"images": len(rows), "out_dir": str(out)}


def cmd_train(args, s):
    d = _load(args, s, include_test=False)
    cfg = build_config(s)
    out = _out_dir(args)
    model = fit(d.train, d.class_count, cfg, d.label_map)
    path = Path(args.model) if args.model else out / f"{d.name}_model.npz"
    model.save(path)
    write_json({"dataset": d.name, "model": str(path), "selection": model.selection,
                "config": cfg.to_dict()}, out / f"{d.name}_train.json")
    return {"model": str(path), "M": model.selection["M"], "C": model.selection["C"]}


def cmd_evaluate(args, s):
    from .plotting import plot_confusion

    d = _load(args, s)
    out = _out_dir(args)
    baselines = tuple(args.baselines or ())
    if args.model:
        model = TrainedModel.load(args.model)
        err, cm = evaluate(model, d.test, d.class_count)
        report = {"dataset": d.name, "error_rate": float(err), "confusion": cm.tolist(),
                  "model": args.model, "selection": model.selection}
        confusion = cm
    else:
        rep = run_experiment(d, build_config(s), baselines=baselines)
        report, confusion, err = rep.to_dict(), np.array(rep.confusion), rep.error_rate
        if args.format == "csv":
            write_reports_csv([rep], out / f"{d.name}_report.csv")
    if args.format == "json" or args.model:
        write_json(report, out / f"{d.name}_report.json")
    labels = [str(d.inverse_label_map[k]) for k in range(1, d.class_count + 1)]
    plot_confusion(confusion, out / f"{d.name}_confusion.png", labels, f"{d.name}: error {100 * err:.1f}%")
    return {"error_rate": float(err)}


def cmd_sweep(args, s):
    from .plotting import plot_accuracy_vs_M, plot_sweep_grid

    d = _load(args, s)
    out = _out_dir(args)
    m = s.get("m") or [3]
    tau = s.get("tau") or [4]
    eps = s.get("epsilon") or [None]
    sizes = [s["codebook_size"]] if "codebook_size" in s else (s.get("codebook_sweep") or [100])
    base_s = {k: v for k, v in s.items() if k not in ("m", "tau", "epsilon", "codebook_sweep")}
    base_s["codebook_size"] = sizes[0]
    cfg = build_config(base_s)
    cells = grid_cells(m, tau, eps, bool(s.get("relative_epsilon", False)), sizes)
    reports = sweep(d, cfg, cells)
    write_reports_csv(reports, out / f"{d.name}_sweep.csv")
    if args.format == "json":
        write_json(reports, out / f"{d.name}_sweep.json")

    ok = [r for r in reports if r.status == "ok"]
    if len(sizes) > 1 and ok:
        lines = {}
        for r in ok:
            key = f"m={r.cell['m']}, tau={r.cell['tau']}, eps={r.cell['epsilon']}"
            lines.setdefault(key, []).append((r.cell["M"], r.accuracy))
        plot_accuracy_vs_M(list(lines.items()), out / f"{d.name}_sweep_M.png", d.name)
    if len(m) * len(tau) > 1:
        for e in eps:
            for M in sizes:
                acc = np.full((len(m), len(tau)), np.nan)
                for r in reports:
                    c = r.cell
                    if r.status == "ok" and c["epsilon"] == e and c["M"] == M:
                        acc[m.index(c["m"]), tau.index(c["tau"])] = r.accuracy
                plot_sweep_grid(acc, m, tau, out / f"{d.name}_sweep_grid_eps{e}_M{M}.png",
                                f"{d.name} M={M} eps={e}")
    best = max(ok, key=lambda r: r.accuracy, default=None)
    return {"cells": len(reports), "failed": len(reports) - len(ok),
            "best": None if best is None else {"cell": best.cell, "accuracy": best.accuracy}}


def _baseline_names(values):
    return values or ["1nn_euclidean", "1nn_dtw"]


def cmd_baseline(args, s):
    d = _load(args, s)
    out = _out_dir(args)
    rows = []
    for name in _baseline_names(args.baselines):
        if name == "1nn_euclidean":
            err = baseline_1nn_euclidean(d)
        elif name == "1nn_dtw":
            err = baseline_1nn_dtw(d)
        elif name.startswith("1nn_dtw_"):
            err = baseline_1nn_dtw(d, float(name.rsplit("_", 1)[1]))
        else:
            raise ConfigError(f"unknown baseline {name!r}")
        rows.append({"dataset": d.name, "baseline": name, "error_rate": err})
    _write_table(rows, out / f"{d.name}_baselines.{args.format}", args.format)
    return {r["baseline"]: r["error_rate"] for r in rows}


def cmd_runtime(args, s):
    from .plotting import plot_runtime

    d = _load(args, s)
    out = _out_dir(args)
    if "codebook_size" not in s:
        s = dict(s, codebook_size=100)
    cfg = build_config(s)
    table = compare_runtime(d, cfg)
    write_runtime_csv(table, out / f"{d.name}_runtime.csv")
    if args.format == "json":
        write_json(table, out / f"{d.name}_runtime.json")
    plot_runtime(table, out / f"{d.name}_runtime.png", f"{d.name}, M={cfg.sizes[0]}")
    return {k: round(v["total"], 3) for k, v in table.items()}


def _write_table(rows, path, fmt):
    if fmt == "json":
        write_json(rows, path)
        return
    import csv

    with open(path, "w", newline="") as fh:
        cols = list(rows[0]) if rows else []
        w = csv.DictWriter(fh, cols)
        w.writeheader()
        w.writerows(rows)


COMMANDS = {"encode": cmd_encode, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "baseline": cmd_baseline, "runtime": cmd_runtime}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("data and output")
    g.add_argument("--dataset")
    g.add_argument("--data-root", dest="data_root")
    g.add_argument("--config", help="key = value settings file")
    g.add_argument("--out-dir", dest="out_dir", default="out")
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("--export-images", dest="export_images", choices=("pgm", "png"))
    g.add_argument("--model", help="model file to write (train) or read (evaluate)")
    g.add_argument("--baselines", type=lambda v: [t.strip() for t in v.split(",") if t.strip()],
                   help="e.g. 1nn_euclidean,1nn_dtw,1nn_dtw_0.1")
    g.add_argument("-v", "--verbose", action="store_true")

    p = common.add_argument_group("pipeline")
    p.add_argument("--m", type=_INT_LIST, help="embedding dimension (comma list for sweep)")
    p.add_argument("--tau", type=_INT_LIST, help="delay (comma list for sweep)")
    p.add_argument("--epsilon", type=_OPT_FLOAT_LIST, help="binary threshold; 'none' for gray (comma list)")
    p.add_argument("--relative-epsilon", dest="relative_epsilon", action="store_true",
                   help="epsilon is a fraction of the largest distance")
    p.add_argument("--patch-sizes", dest="patch_sizes", type=_INT_LIST)
    p.add_argument("--stride", type=int)
    p.add_argument("--codebook-size", dest="codebook_size", type=int)
    p.add_argument("--codebook-sweep", dest="codebook_sweep", type=_INT_LIST)
    p.add_argument("--knn", type=int)
    p.add_argument("--mu-reg", dest="mu_reg", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--no-llc-opt", dest="no_llc_opt", action="store_true")
    p.add_argument("--c-grid", dest="c_grid", type=_FLOAT_LIST)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--bag-size", dest="bag_size", type=int)
    p.add_argument("--max-side", dest="max_side", type=int, help="downsize images larger than this")
    p.add_argument("--pooling", choices=("abs", "signed"))
    p.add_argument("--znormalize", action="store_true", help="z-normalize each series first")

    parser = argparse.ArgumentParser(prog="bor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"encode": "write recurrence images", "train": "fit and save a model",
             "evaluate": "test-set error (train first unless --model)", "sweep": "grid over m, tau, epsilon, M",
             "baseline": "1-NN baselines", "runtime": "stage timing of BoR vs 1D-BoF"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        s = resolve_settings(args)
        summary = COMMANDS[args.command](args, s)
    except BorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
