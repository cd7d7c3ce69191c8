"""Prediction-level audit of debiasing: who changed, how consistently, which way.

The unit of analysis is the delta set: instances whose hard label differs
between the biased model f and a fair model g.  Summaries cover impact size
(|delta| / n), overlap across runs or methods (intersection over union),
retrain stability, direction-by-group breakdowns, and per-group outcome rates.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .fairness_metrics import (DegenerateGroupError, demographic_parity_rates,
                               tpr_fpr_by_group)

logger = logging.getLogger(__name__)


class AuditError(ValueError):
    """Mismatched id sets or splits, mixed methods, empty inputs."""


def split_signature(ids) -> str:
    """Stable short identifier of an audited id set (order-insensitive)."""
    data = np.sort(np.asarray(ids, dtype=np.int64))
    return hashlib.sha256(data.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class DeltaSet:
    """Ids where f and g disagree, annotated with group and direction (+1 = 0->1)."""

    method_id: str
    run_id: int
    changed: np.ndarray  # sorted instance ids
    direction: np.ndarray  # +1 or -1 per changed id
    s: np.ndarray | None  # group per changed id, None when unavailable
    n_total: int
    signature: str  # of the full audited id set

    def __post_init__(self):
        if len(self.changed) != len(self.direction):
            raise AuditError("changed/direction length mismatch")
        if self.s is not None and len(self.s) != len(self.changed):
            raise AuditError("changed/s length mismatch")
        if self.n_total <= 0:
            raise AuditError("n_total must be positive")
        for arr in (self.changed, self.direction, self.s):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.changed)

    def id_set(self) -> frozenset:
        return frozenset(int(i) for i in self.changed)


@dataclass(frozen=True)
class StabilitySummary:
    method_id: str
    run_count: int
    mean_changed_pct: float
    always_changed_pct: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DirectionTable:
    """Percentages of |delta| per (direction, group) cell; empty delta is flagged."""

    cells: dict  # {"positive": {"s0": pct, "s1": pct}, "negative": {...}}
    counts: dict
    n_changed: int
    empty: bool = False

    def as_dict(self) -> dict:
        return {"cells": self.cells, "counts": self.counts,
                "n_changed": self.n_changed, "empty": self.empty}


def compute_delta(preds_f, preds_g, method_id: str = "", run_id: int = 0) -> DeltaSet:
    """Delta set of two prediction sets over the same ids (any common order)."""
    order_f = np.argsort(preds_f.ids, kind="stable")
    order_g = np.argsort(preds_g.ids, kind="stable")
    ids_f = preds_f.ids[order_f]
    ids_g = preds_g.ids[order_g]
    if len(ids_f) != len(ids_g) or not np.array_equal(ids_f, ids_g):
        raise AuditError("prediction sets cover different id sets")
    lab_f = preds_f.labels[order_f]
    lab_g = preds_g.labels[order_g]
    changed = lab_f != lab_g
    direction = np.where(lab_g > lab_f, 1, -1)[changed].astype(np.int64)
    s = preds_f.s if preds_f.s is not None else preds_g.s
    if s is not None:
        s = (preds_f.s[order_f] if preds_f.s is not None else preds_g.s[order_g])[changed]
        s = s.copy()
    return DeltaSet(method_id=method_id, run_id=run_id,
                    changed=ids_f[changed].copy(), direction=direction, s=s,
                    n_total=len(ids_f), signature=split_signature(ids_f))


def impact_fraction(delta: DeltaSet) -> float:
    """|changed| / audited-split size."""
    return delta.size / delta.n_total


def _check_same_split(deltas) -> None:
    first = deltas[0]
    for d in deltas[1:]:
        if d.signature != first.signature or d.n_total != first.n_total:
            raise AuditError("delta sets come from different splits")


def iou(deltas) -> float:
    """|intersection| / |union| of the changed sets; all-empty inputs give 1.0."""
    deltas = list(deltas)
    if len(deltas) < 2:
        raise AuditError("iou needs at least two delta sets")
    _check_same_split(deltas)
    sets = [d.id_set() for d in deltas]
    union = frozenset().union(*sets)
    if not union:
        logger.warning("iou: all delta sets empty, returning 1.0 (vacuous agreement)")
        return 1.0
    inter = sets[0]
    for s in sets[1:]:
        inter = inter & s
    return len(inter) / len(union)


def stability(deltas) -> StabilitySummary:
    """Mean vs always-changed share of the split for one method across runs."""
    deltas = list(deltas)
    if len(deltas) < 2:
        raise AuditError("stability needs at least two runs")
    methods = {d.method_id for d in deltas}
    if len(methods) != 1:
        raise AuditError(f"stability mixes methods: {sorted(methods)}")
    _check_same_split(deltas)
    n = deltas[0].n_total
    mean_pct = float(np.mean([d.size for d in deltas])) / n * 100.0
    always = deltas[0].id_set()
    for d in deltas[1:]:
        always &= d.id_set()
    return StabilitySummary(method_id=deltas[0].method_id, run_count=len(deltas),
                            mean_changed_pct=mean_pct,
                            always_changed_pct=len(always) / n * 100.0)


def direction_table(delta: DeltaSet) -> DirectionTable:
    """Breakdown of |delta| by direction and group, as percentages."""
    if delta.size == 0:
        zero = {"s0": 0.0, "s1": 0.0}
        return DirectionTable(cells={"positive": dict(zero), "negative": dict(zero)},
                              counts={"positive": dict(zero), "negative": dict(zero)},
                              n_changed=0, empty=True)
    if delta.s is None:
        raise AuditError("delta carries no group annotation")
    cells, counts = {}, {}
    for name, dval in (("positive", 1), ("negative", -1)):
        cells[name], counts[name] = {}, {}
        for gname, gval in (("s0", 0), ("s1", 1)):
            c = int(((delta.direction == dval) & (delta.s == gval)).sum())
            counts[name][gname] = c
            cells[name][gname] = c / delta.size * 100.0
    return DirectionTable(cells=cells, counts=counts, n_changed=delta.size)


@dataclass(frozen=True)
class GroupRates:
    e_yhat: tuple[float, float]  # E[yhat | s=0], E[yhat | s=1]
    tpr: tuple[float, float] | None = None
    fpr: tuple[float, float] | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def group_outcome_rates(preds, s, y=None) -> GroupRates:
    """Positive-outcome rate per group; with labels, also TPR/FPR per group."""
    e_yhat = demographic_parity_rates(preds, s)
    if y is None:
        return GroupRates(e_yhat=e_yhat)
    tpr, fpr = tpr_fpr_by_group(preds, y, s)
    return GroupRates(e_yhat=e_yhat, tpr=tpr, fpr=fpr)


@dataclass(frozen=True)
class AuditReport:
    """Everything the audit produces, ready for serialization.

    Leaf values are plain dicts/lists/numbers so the report JSON-round-trips
    exactly; section layouts are produced by experiment assembly.
    """

    version: str
    metadata: dict  # dataset, config_hash, seeds, runs, n_test, methods
    fairness: dict  # role -> per-run list of fairness score dicts
    impact: dict  # method -> per-run impact fractions
    stability: dict  # method -> StabilitySummary dict
    iou_across_runs: dict  # method -> {"global": x, "pairwise": [[...]]}
    iou_across_methods: dict  # {"methods": [...], "per_run": [...], "pairwise": {...}}
    directions: dict  # method -> per-run DirectionTable dicts
    group_rates: dict  # role -> per-run GroupRates dicts
    plsda: dict  # "m1|m2" -> summary dict
    gaps: list  # failed (method, run) cells with reasons

    def validate(self) -> None:
        methods = self.metadata.get("methods", [])
        if len(set(methods)) != len(methods):
            raise AuditError("duplicate method in report metadata")
        for method, tables in self.directions.items():
            for t in tables:
                if t is None:  # placeholder for a failed cell
                    continue
                for row in t["cells"].values():
                    for pct in row.values():
                        if not 0.0 <= pct <= 100.0:
                            raise AuditError(f"direction pct out of range for {method}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AuditReport":
        return cls(**json.loads(text))

    def report_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()
