"""Tabular dataset loading: manifest-driven encoding, binarization and seeded splits.

A dataset is described by a :class:`DatasetManifest` (usually a JSON file).
Loading produces two :class:`DataSplit` objects (train/test): one-hot encoded,
standardized with train statistics, with a binary sensitive vector ``s``
(1 = privileged) and binary labels ``y`` (1 = favorable outcome).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

_STD_FLOOR = 1e-12


class DataIngestError(ValueError):
    """Raised for manifest/data problems: missing columns, unmatched values, empty splits."""


@dataclass(frozen=True)
class BinarizeRule:
    """Maps raw column values onto {0, 1}.

    Exactly one of ``equals`` / ``interval`` is set.  ``equals`` marks the
    matching raw value as 1; everything else is 0 unless ``other`` is given,
    in which case any value outside {equals, other} is an error.
    ``interval`` is an inclusive numeric [lo, hi] range mapped to 1.
    """

    equals: object = None
    interval: tuple[float, float] | None = None
    other: object = None

    def __post_init__(self):
        if (self.equals is None) == (self.interval is None):
            raise DataIngestError("rule needs exactly one of 'equals' or 'interval'")

    @classmethod
    def from_config(cls, value) -> "BinarizeRule":
        if isinstance(value, dict):
            if "interval" in value:
                lo, hi = value["interval"]
                return cls(interval=(float(lo), float(hi)))
            return cls(equals=value["equals"], other=value.get("other"))
        return cls(equals=value)

    def to_config(self):
        if self.interval is not None:
            return {"interval": list(self.interval)}
        if self.other is not None:
            return {"equals": self.equals, "other": self.other}
        return self.equals


def binarize_sensitive(raw_values, rule: BinarizeRule) -> np.ndarray:
    """Apply a binarization rule to a value sequence; 1 where the privileged predicate holds."""
    values = np.asarray(raw_values)
    if rule.interval is not None:
        lo, hi = rule.interval
        try:
            numeric = values.astype(float)
        except (TypeError, ValueError) as exc:
            raise DataIngestError(f"interval rule on non-numeric values: {exc}") from None
        if not np.isfinite(numeric).all():
            raise DataIngestError("interval rule hit a non-finite value")
        return ((numeric >= lo) & (numeric <= hi)).astype(np.int64)
    matched = np.array([_raw_eq(v, rule.equals) for v in values], dtype=bool)
    if rule.other is not None:
        is_other = np.array([_raw_eq(v, rule.other) for v in values], dtype=bool)
        bad = ~(matched | is_other)
        if bad.any():
            culprit = values[bad][0]
            raise DataIngestError(f"value {culprit!r} matches neither side of the rule")
    return matched.astype(np.int64)


def _raw_eq(value, target) -> bool:
    if isinstance(target, str):
        return str(value).strip() == target.strip()
    try:
        return float(value) == float(target)
    except (TypeError, ValueError):
        return value == target


@dataclass(frozen=True)
class DatasetManifest:
    """Declarative description of one delimited dataset."""

    source_path: str
    feature_columns: tuple[tuple[str, str], ...]  # (name, "numeric"|"categorical")
    sensitive_column: str
    privileged_rule: BinarizeRule
    label_column: str
    favorable_rule: BinarizeRule
    split_fraction: float = 0.5
    split_seed: int = 0
    na_values: tuple[str, ...] = ("", "?", "NA")
    name: str = ""
    synthetic: dict | None = None  # optional offline generator block, see synthetic.py

    def __post_init__(self):
        names = [c for c, _ in self.feature_columns]
        if self.sensitive_column in names or self.label_column in names:
            raise DataIngestError("sensitive/label column must not appear in feature_columns")
        if len(set(names)) != len(names):
            raise DataIngestError("duplicate feature column")
        for _, kind in self.feature_columns:
            if kind not in ("numeric", "categorical"):
                raise DataIngestError(f"unknown feature kind {kind!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise DataIngestError("split_fraction must lie in (0, 1)")

    @classmethod
    def from_json(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        source = Path(doc["source_path"])
        if not source.is_absolute():
            source = path.parent / source  # relative to the manifest's own location
        return cls(
            source_path=str(source),
            feature_columns=tuple((str(n), str(k)) for n, k in doc["feature_columns"]),
            sensitive_column=doc["sensitive_column"],
            privileged_rule=BinarizeRule.from_config(doc["privileged_value"]),
            label_column=doc["label_column"],
            favorable_rule=BinarizeRule.from_config(doc["favorable_value"]),
            split_fraction=float(doc.get("split_fraction", 0.5)),
            split_seed=int(doc.get("split_seed", 0)),
            na_values=tuple(doc.get("na_values", ["", "?", "NA"])),
            name=doc.get("name", Path(path).stem),
            synthetic=doc.get("synthetic"),
        )

    def to_json_dict(self) -> dict:
        doc = {
            "name": self.name,
            "source_path": self.source_path,
            "feature_columns": [list(c) for c in self.feature_columns],
            "sensitive_column": self.sensitive_column,
            "privileged_value": self.privileged_rule.to_config(),
            "label_column": self.label_column,
            "favorable_value": self.favorable_rule.to_config(),
            "split_fraction": self.split_fraction,
            "split_seed": self.split_seed,
            "na_values": list(self.na_values),
        }
        if self.synthetic is not None:
            doc["synthetic"] = self.synthetic
        return doc


@dataclass(frozen=True)
class DataSplit:
    """Standardized feature matrix with ids, sensitive vector and labels.

    Arrays are marked read-only; a split can be shared freely across threads.
    ``standardization`` holds the per-column (mean, stddev) fitted on train.
    """

    ids: np.ndarray
    X: np.ndarray
    s: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    standardization: tuple[np.ndarray, np.ndarray]  # (means, stds), train-fitted

    def __post_init__(self):
        n = len(self.ids)
        if not (self.X.shape[0] == n == len(self.s) == len(self.y)):
            raise DataIngestError("ids/X/s/y length mismatch")
        if len(np.unique(self.ids)) != n:
            raise DataIngestError("instance ids are not unique")
        for arr in (self.ids, self.X, self.s, self.y, *self.standardization):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class LoadReport:
    rows_total: int
    rows_dropped_missing: int
    n_train: int
    n_test: int
    columns: tuple[str, ...]


def load_dataset(manifest: DatasetManifest) -> tuple[DataSplit, DataSplit]:
    """Load, encode, binarize and split a dataset according to its manifest."""
    train, test, _ = load_dataset_with_report(manifest)
    return train, test


def load_dataset_with_report(manifest: DatasetManifest):
    """Same as :func:`load_dataset` but also returns the :class:`LoadReport`."""
    path = Path(manifest.source_path)
    if not path.exists():
        raise DataIngestError(f"dataset file not found: {path}")
    frame = pd.read_csv(path, skipinitialspace=True, dtype=str,
                        keep_default_na=False, na_values=list(manifest.na_values))
    needed = [n for n, _ in manifest.feature_columns]
    needed += [manifest.sensitive_column, manifest.label_column]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise DataIngestError(f"missing columns in {path.name}: {missing}")

    rows_total = len(frame)
    frame = frame[needed]
    kept = frame.dropna()
    dropped = rows_total - len(kept)
    if dropped:
        logger.info("dropped %d/%d rows with missing values", dropped, rows_total)
    if kept.empty:
        raise DataIngestError("no rows left after dropping missing values")

    ids = kept.index.to_numpy(dtype=np.int64)
    s = binarize_sensitive(kept[manifest.sensitive_column].to_numpy(), manifest.privileged_rule)
    y = binarize_sensitive(kept[manifest.label_column].to_numpy(), manifest.favorable_rule)

    X_raw, columns = _encode_features(kept, manifest.feature_columns)

    train_idx, test_idx = _stratified_split(s, y, manifest.split_fraction,
                                            manifest.split_seed)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DataIngestError("empty split: adjust split_fraction or dataset size")

    means = X_raw[train_idx].mean(axis=0)
    stds = X_raw[train_idx].std(axis=0, ddof=0)
    stds = np.where(stds < _STD_FLOOR, 1.0, stds)  # constant column: keep zeros, no NaN

    def build(idx):
        return DataSplit(
            ids=ids[idx].copy(),
            X=(X_raw[idx] - means) / stds,
            s=s[idx].copy(),
            y=y[idx].copy(),
            columns=columns,
            standardization=(means.copy(), stds.copy()),
        )

    report = LoadReport(rows_total=rows_total, rows_dropped_missing=dropped,
                        n_train=len(train_idx), n_test=len(test_idx), columns=columns)
    return build(train_idx), build(test_idx), report


def _encode_features(frame: pd.DataFrame, feature_columns):
    """Numeric columns as float; categoricals fully one-hot (no dropped category)."""
    blocks, names = [], []
    for col, kind in feature_columns:
        if kind == "numeric":
            try:
                values = frame[col].astype(float).to_numpy()
            except ValueError as exc:
                raise DataIngestError(f"column {col!r} is not numeric: {exc}") from None
            blocks.append(values[:, None])
            names.append(col)
        else:
            raw = frame[col].astype(str).str.strip()
            for cat in sorted(raw.unique()):
                blocks.append((raw == cat).to_numpy(dtype=float)[:, None])
                names.append(f"{col}={cat}")
    return np.hstack(blocks), tuple(names)


def _stratified_split(s, y, fraction, seed):
    """Split stratified jointly on (s, y); every index lands in exactly one side."""
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for sv in (0, 1):
        for yv in (0, 1):
            cell = np.flatnonzero((s == sv) & (y == yv))
            if len(cell) == 0:
                continue
            perm = rng.permutation(cell)
            k = int(round(fraction * len(cell)))
            train_parts.append(perm[:k])
            test_parts.append(perm[k:])
    train_idx = np.sort(np.concatenate(train_parts)) if train_parts else np.array([], int)
    test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.array([], int)
    return train_idx, test_idx


# ---------------------------------------------------------------------------
# Split cache files: column-major text, one line per column.
#
#   fairdelta-split v1
#   n <rows> m <feature columns>
#   ids <id0> <id1> ...
#   s <...>
#   y <...>
#   col <name> <train_mean> <train_std> <x0> <x1> ...
#
# Column names must not contain whitespace; encode_features never emits any.
# ---------------------------------------------------------------------------

def save_split(split: DataSplit, path) -> None:
    path = Path(path)
    lines = ["fairdelta-split v1", f"n {split.n} m {split.m}"]
    lines.append("ids " + " ".join(str(int(i)) for i in split.ids))
    lines.append("s " + " ".join(str(int(v)) for v in split.s))
    lines.append("y " + " ".join(str(int(v)) for v in split.y))
    means, stds = split.standardization
    for j, name in enumerate(split.columns):
        head = f"col {name} {_fmt(means[j])} {_fmt(stds[j])} "
        lines.append(head + " ".join(_fmt(v) for v in split.X[:, j]))
    path.write_text("\n".join(lines) + "\n")


def load_split(path) -> DataSplit:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "fairdelta-split v1":
        raise DataIngestError(f"{path} is not a fairdelta split file")
    n, m = int(lines[1].split()[1]), int(lines[1].split()[3])
    ids = np.array(lines[2].split()[1:], dtype=np.int64)
    s = np.array(lines[3].split()[1:], dtype=np.int64)
    y = np.array(lines[4].split()[1:], dtype=np.int64)
    columns, means, stds, cols = [], [], [], []
    for line in lines[5:5 + m]:
        parts = line.split()
        columns.append(parts[1])
        means.append(float(parts[2]))
        stds.append(float(parts[3]))
        cols.append(np.array(parts[4:], dtype=float))
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    return DataSplit(ids=ids, X=X, s=s, y=y, columns=tuple(columns),
                     standardization=(np.array(means), np.array(stds)))


def _fmt(v: float) -> str:
    return "%.17g" % float(v)
