"""Loading and validation of labeled univariate series in the UCR text format.

A UCR file holds one series per line: the first field is the class label and
the remaining fields are the samples. Fields are separated by commas, tabs or
(older archive releases) runs of spaces; the delimiter is detected per file.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "TimeSeries",
    "Dataset",
    "read_ucr_records",
    "load_ucr_file",
    "load_dataset",
    "find_split_file",
    "save_ucr_file",
    "validate_dataset",
    "znormalize",
]


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    label: int
    id: int = 0

    @property
    def length(self) -> int:
        return int(self.values.shape[0])


@dataclass
class Dataset:
    name: str
    train: list[TimeSeries]
    test: list[TimeSeries]
    class_count: int
    # raw label -> contiguous label in 1..class_count
    label_map: dict[int, int] = field(default_factory=dict)
    fixed_length: bool = True

    @property
    def series_length(self) -> int | None:
        lengths = {s.length for s in self.train + self.test}
        return lengths.pop() if len(lengths) == 1 else None

    @property
    def inverse_label_map(self) -> dict[int, int]:
        return {v: k for k, v in self.label_map.items()}

    def arrays(self, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
        """Stack one split into an ``(n, l)`` value matrix and a label vector."""
        series = self.train if split == "train" else self.test
        if not series:
            return np.empty((0, 0)), np.empty(0, dtype=int)
        X = np.vstack([s.values for s in series])
        y = np.array([s.label for s in series], dtype=int)
        return X, y


def _detect_delimiter(line: str) -> str:
    if "," in line:
        return ","
    if "\t" in line:
        return "\t"
    return "whitespace"


def _parse_label(token: str, path, lineno: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric label {token!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise DataError(f"{path}:{lineno}: label {token!r} is not an integer")
    return int(value)


def read_ucr_records(path) -> tuple[list[int], list[np.ndarray]]:
    """Parse a UCR file into raw integer labels and value arrays (file order)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise DataError(f"{path}: no records")
    delim = _detect_delimiter(lines[0][1])
    splitter = re.compile(r"\s+") if delim == "whitespace" else None

    labels, values = [], []
    for lineno, line in lines:
        fields = splitter.split(line) if splitter else [f.strip() for f in line.split(delim)]
        if len(fields) < 3:
            raise DataError(f"{path}:{lineno}: expected a label and at least 2 values, got {len(fields)} fields")
        labels.append(_parse_label(fields[0], path, lineno))
        try:
            values.append(np.array([float(f) for f in fields[1:]], dtype=np.float64))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    return labels, values


def _contiguous_map(raw_labels) -> dict[int, int]:
    return {raw: k + 1 for k, raw in enumerate(sorted(set(raw_labels)))}


def load_ucr_file(path, label_map: dict[int, int] | None = None, fixed_length: bool = False) -> list[TimeSeries]:
    """Load one UCR file.

    Labels are remapped to ``1..N_c``. When ``label_map`` is given it is used
    as-is (so train and test share one mapping) and a raw label missing from it
    is an error; otherwise a mapping is built from this file's labels in
    ascending order.
    """
    raw, values = read_ucr_records(path)
    if fixed_length and len({v.shape[0] for v in values}) > 1:
        raise DataError(f"{path}: inconsistent series lengths in a fixed-length dataset")
    mapping = label_map if label_map is not None else _contiguous_map(raw)
    out = []
    for idx, (lab, vals) in enumerate(zip(raw, values)):
        if lab not in mapping:
            raise DataError(f"{path}: series {idx} has label {lab} not present in the training split")
        out.append(TimeSeries(values=vals, label=mapping[lab], id=idx))
    return out


def find_split_file(root, name: str, split: str) -> Path:
    """Locate ``<name>_<SPLIT>`` (any extension) under ``root`` or ``root/name``."""
    split = split.upper()
    for base in (Path(root) / name, Path(root)):
        if not base.is_dir():
            continue
        hits = sorted(p for p in base.iterdir() if p.is_file() and p.stem == f"{name}_{split}")
        if hits:
            return hits[0]
    raise DataError(f"no {split} file for dataset {name!r} under {root}")


def load_dataset(root, name: str, include_test: bool = True, fixed_length: bool = True) -> Dataset:
    """Load the fixed train/test split of a UCR dataset.

    The label mapping is derived from the training file alone, so the trained
    part of any pipeline never depends on the test file.
    """
    train_path = find_split_file(root, name, "TRAIN")
    raw, _ = read_ucr_records(train_path)
    mapping = _contiguous_map(raw)
    train = load_ucr_file(train_path, mapping)
    test: list[TimeSeries] = []
    if include_test:
        test = load_ucr_file(find_split_file(root, name, "TEST"), mapping)
    return Dataset(name=name, train=train, test=test, class_count=len(mapping),
                   label_map=mapping, fixed_length=fixed_length)


def save_ucr_file(series, path, inverse_label_map: dict[int, int] | None = None, delimiter: str = ",") -> None:
    """Write series in UCR format with 17 significant digits (exact float round-trip)."""
    inv = inverse_label_map or {}
    with open(path, "w") as fh:
        for s in series:
            label = inv.get(s.label, s.label)
            fh.write(delimiter.join([str(label)] + [format(float(v), ".17g") for v in s.values]))
            fh.write("\n")


def validate_dataset(d: Dataset) -> list[str]:
    """Return one human-readable finding per violated dataset invariant."""
    findings = []
    lengths = set()
    for split, series in (("train", d.train), ("test", d.test)):
        for s in series:
            where = f"{split} series {s.id}"
            if not np.all(np.isfinite(s.values)):
                findings.append(f"{where}: non-finite value")
            if not 1 <= s.label <= d.class_count:
                findings.append(f"{where}: label {s.label} out of range 1..{d.class_count}")
            if s.length < 2:
                findings.append(f"{where}: length {s.length} < 2")
            lengths.add(s.length)
    if d.fixed_length and len(lengths) > 1:
        findings.append(f"inconsistent series lengths {sorted(lengths)} in a fixed-length dataset")
    if d.class_count < 2:
        findings.append(f"class_count {d.class_count} < 2")
    return findings


def znormalize(s: TimeSeries) -> TimeSeries:
    v = s.values
    sd = v.std()
    z = (v - v.mean()) / sd if sd > 0 else v - v.mean()
    return TimeSeries(values=z, label=s.label, id=s.id)
