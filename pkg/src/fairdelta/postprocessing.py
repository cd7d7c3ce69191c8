"""Post-processing mitigation on a frozen scorer.

Two methods operate on scores only:

* Reject Option Classification: below a confidence threshold the prediction is
  overridden in favor of the disadvantaged group (optimizes Demographic
  Parity).  Deterministic, no randomness anywhere.
* Per-group threshold optimization: pick group-specific decision thresholds
  (possibly randomized between two values) so that both groups operate at the
  same (FPR, TPR) point while accuracy is maximized (optimizes Equalized
  Odds).  The achievable region per group is the convex hull of its empirical
  ROC points; the common operating point is chosen on the pointwise-lower of
  the two upper envelopes, where the accuracy objective is linear.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .fairness_metrics import DegenerateGroupError, p_rule
from .mlp_core import MlpError, PredictionSet

logger = logging.getLogger(__name__)

_EXACT = 1e-9


@dataclass(frozen=True)
class RocConfig:
    theta: float = 0.86
    objective_target: float = 0.9
    search_grid: float = 0.005

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise MlpError("theta must lie in [0.5, 1]")
        if self.search_grid <= 0:
            raise MlpError("search_grid must be positive")


@dataclass(frozen=True)
class RocSearchResult:
    theta: float
    p_rule: float
    reached: bool  # objective_target attained on the grid


def roc_flip(scores, s, theta: float) -> PredictionSet:
    """Override low-confidence predictions: favorable for s=0, unfavorable for s=1."""
    scores = _check_scores(scores)
    if not 0.5 <= theta <= 1.0:
        raise MlpError("theta must lie in [0.5, 1]")
    s = np.asarray(s)
    base = (scores > 0.5).astype(np.int64)
    confidence = np.maximum(scores, 1.0 - scores)
    critical = confidence < theta
    labels = base.copy()
    labels[critical & (s == 0)] = 1
    labels[critical & (s == 1)] = 0
    return PredictionSet(ids=np.arange(len(scores)), scores=scores.copy(),
                         labels=labels, s=s.copy())


def roc_search(scores_val, s_val, objective_target: float = 0.9,
               grid: float = 0.005) -> RocSearchResult:
    """Smallest grid theta reaching the p%-rule target, else the argmax theta flagged."""
    if grid <= 0:
        raise MlpError("grid step must be positive")
    steps = int(round(0.5 / grid))
    thetas = np.minimum(0.5 + grid * np.arange(steps + 1), 1.0)
    if thetas[-1] < 1.0:
        thetas = np.append(thetas, 1.0)
    best_theta, best_p = thetas[0], -1.0
    for theta in thetas:
        value = p_rule(roc_flip(scores_val, s_val, theta), s_val)
        if value >= objective_target:
            return RocSearchResult(theta=float(theta), p_rule=value, reached=True)
        if value > best_p:
            best_theta, best_p = float(theta), value
    logger.warning("roc_search: target %.3f unreachable, best p_rule %.3f at theta %.3f",
                   objective_target, best_p, best_theta)
    return RocSearchResult(theta=best_theta, p_rule=best_p, reached=False)


@dataclass(frozen=True)
class GroupThreshold:
    """One group's decision rule: score > t_high with probability mix, else > t_low."""

    t_low: float
    t_high: float
    mix: float  # probability of using t_high

    def __post_init__(self):
        if not (0.0 <= self.t_low <= 1.0 and 0.0 <= self.t_high <= 1.0):
            raise MlpError("thresholds must lie in [0, 1]")
        if not 0.0 <= self.mix <= 1.0:
            raise MlpError("mix probability must lie in [0, 1]")
        if self.t_low > self.t_high:
            raise MlpError("t_low must not exceed t_high")


@dataclass(frozen=True)
class GroupThresholds:
    group0: GroupThreshold
    group1: GroupThreshold
    rng_seed: int = 0
    target_tpr: float = float("nan")
    target_fpr: float = float("nan")
    realized: tuple[tuple[float, float], ...] = ()  # per group (fpr, tpr) on the fit split
    exact_intersection: bool = True

    def to_json(self) -> str:
        doc = {
            "group0": [self.group0.t_low, self.group0.t_high, self.group0.mix],
            "group1": [self.group1.t_low, self.group1.t_high, self.group1.mix],
            "rng_seed": self.rng_seed,
            "target_tpr": self.target_tpr,
            "target_fpr": self.target_fpr,
            "realized": [list(r) for r in self.realized],
            "exact_intersection": self.exact_intersection,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroupThresholds":
        doc = json.loads(text)
        return cls(group0=GroupThreshold(*doc["group0"]),
                   group1=GroupThreshold(*doc["group1"]),
                   rng_seed=int(doc["rng_seed"]),
                   target_tpr=float(doc["target_tpr"]),
                   target_fpr=float(doc["target_fpr"]),
                   realized=tuple(tuple(r) for r in doc["realized"]),
                   exact_intersection=bool(doc["exact_intersection"]))


def roc_points(scores, y) -> tuple[np.ndarray, np.ndarray]:
    """Empirical (fpr, tpr) for thresholds {0, 1} plus every distinct score.

    Labeling rule is strict score > t, so t=1 yields (0, 0) and t=0 yields (1, 1)
    for scores strictly inside (0, 1).
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    pos, neg = (y == 1).sum(), (y == 0).sum()
    if pos == 0 or neg == 0:
        raise DegenerateGroupError("roc curve needs both label classes")
    thresholds = np.unique(np.concatenate([[0.0, 1.0], scores]))
    pred = scores[:, None] > thresholds[None, :]
    tpr = pred[y == 1].sum(axis=0) / pos
    fpr = pred[y == 0].sum(axis=0) / neg
    return thresholds, np.column_stack([fpr, tpr])


def _upper_envelope(points: np.ndarray) -> np.ndarray:
    """Indices of hull vertices forming the concave upper boundary, fpr-increasing."""
    order = np.lexsort((points[:, 1], points[:, 0]))
    hull: list[int] = []
    for i in order:
        while len(hull) >= 2:
            a, b = points[hull[-2]], points[hull[-1]]
            c = points[i]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross >= -1e-15:  # b is on or below chord a-c: drop it
                hull.pop()
            else:
                break
        hull.append(i)
    # keep only the monotone upper part: drop duplicate-fpr lower points
    keep = []
    for i in hull:
        if keep and abs(points[i, 0] - points[keep[-1], 0]) < 1e-15:
            if points[i, 1] > points[keep[-1], 1]:
                keep[-1] = i
        else:
            keep.append(i)
    return np.array(keep, dtype=int)


def _envelope_value(env_pts: np.ndarray, fpr: float) -> float:
    """Piecewise-linear height of the envelope at a given fpr."""
    xs, ys = env_pts[:, 0], env_pts[:, 1]
    fpr = min(max(fpr, xs[0]), xs[-1])
    j = int(np.searchsorted(xs, fpr, side="right")) - 1
    j = min(max(j, 0), len(xs) - 2)
    if xs[j + 1] == xs[j]:
        return float(max(ys[j], ys[j + 1]))
    lam = (fpr - xs[j]) / (xs[j + 1] - xs[j])
    return float((1 - lam) * ys[j] + lam * ys[j + 1])


def _segment_crossings(env0: np.ndarray, env1: np.ndarray) -> list[float]:
    """fpr coordinates where the two piecewise-linear envelopes intersect."""
    out = []
    for a0, b0 in zip(env0[:-1], env0[1:]):
        for a1, b1 in zip(env1[:-1], env1[1:]):
            lo = max(a0[0], a1[0])
            hi = min(b0[0], b1[0])
            if lo > hi:
                continue
            def h(seg_a, seg_b, x):
                if seg_b[0] == seg_a[0]:
                    return seg_a[1]
                t = (x - seg_a[0]) / (seg_b[0] - seg_a[0])
                return (1 - t) * seg_a[1] + t * seg_b[1]
            d_lo = h(a0, b0, lo) - h(a1, b1, lo)
            d_hi = h(a0, b0, hi) - h(a1, b1, hi)
            if d_lo == 0.0:
                out.append(lo)
            if d_hi == 0.0:
                out.append(hi)
            if d_lo * d_hi < 0:
                x = lo + (hi - lo) * d_lo / (d_lo - d_hi)
                out.append(float(x))
    return out


def fit_group_thresholds(scores_val, y_val, s_val, rng_seed: int = 0) -> GroupThresholds:
    """Equalize (FPR, TPR) across groups at maximum accuracy.

    The common operating point is searched on the pointwise minimum of the two
    groups' upper ROC envelopes (always non-empty: every envelope joins (0,0)
    to (1,1)).  A group whose envelope passes through the point realizes it by
    mixing the two adjacent vertex thresholds; a group whose envelope lies
    strictly above realizes the nearest point on any chord of its empirical
    curve, which on non-degenerate data coincides with the target.
    """
    scores = _check_scores(scores_val)
    y = np.asarray(y_val)
    s = np.asarray(s_val)
    groups = []
    for g in (0, 1):
        mask = s == g
        if not mask.any():
            raise DegenerateGroupError(f"group s={g} is empty")
        thresholds, pts = roc_points(scores[mask], y[mask])
        env = pts[_upper_envelope(pts)]
        groups.append({"thresholds": thresholds, "points": pts, "env": env})

    p_pos = float(np.mean(y == 1))
    candidates = set()
    for g in groups:
        candidates.update(float(v) for v in g["env"][:, 0])
    candidates.update(_segment_crossings(groups[0]["env"], groups[1]["env"]))

    best = None
    for fpr in sorted(candidates):
        tpr = min(_envelope_value(groups[0]["env"], fpr),
                  _envelope_value(groups[1]["env"], fpr))
        acc = p_pos * tpr - (1 - p_pos) * fpr + (1 - p_pos)
        if best is None or acc > best[0] + _EXACT:
            best = (acc, fpr, tpr)
    _, fpr_t, tpr_t = best
    target = np.array([fpr_t, tpr_t])

    rules, realized, exact = [], [], True
    for g in groups:
        on_env = abs(_envelope_value(g["env"], fpr_t) - tpr_t) <= _EXACT
        if on_env:
            rule, point = _realize_on_envelope(g, target)
        else:
            rule, point = _realize_by_chord(g, target)
        rules.append(rule)
        realized.append((float(point[0]), float(point[1])))
        if np.abs(point - target).max() > _EXACT:
            exact = False
    if not exact:
        worst = max(abs(r[0] - fpr_t) + abs(r[1] - tpr_t) for r in realized)
        logger.warning("group thresholds: no exact intersection, residual %.4f", worst)

    return GroupThresholds(group0=rules[0], group1=rules[1], rng_seed=rng_seed,
                           target_tpr=float(tpr_t), target_fpr=float(fpr_t),
                           realized=tuple(realized), exact_intersection=exact)


def _mixture_rule(t_a: float, p_a: np.ndarray, t_b: float, p_b: np.ndarray,
                  lam: float) -> tuple[GroupThreshold, np.ndarray]:
    """Rule mixing thresholds a and b with weight lam on b; collapses endpoints."""
    point = (1 - lam) * p_a + lam * p_b
    if lam <= _EXACT:
        return GroupThreshold(t_low=float(t_a), t_high=float(t_a), mix=0.0), p_a
    if lam >= 1 - _EXACT:
        return GroupThreshold(t_low=float(t_b), t_high=float(t_b), mix=0.0), p_b
    if t_a <= t_b:
        return GroupThreshold(t_low=float(t_a), t_high=float(t_b), mix=float(lam)), point
    return GroupThreshold(t_low=float(t_b), t_high=float(t_a), mix=float(1 - lam)), point


def _realize_on_envelope(group, target) -> tuple[GroupThreshold, np.ndarray]:
    env = group["env"]
    xs = env[:, 0]
    j = int(np.searchsorted(xs, target[0], side="right")) - 1
    j = min(max(j, 0), len(xs) - 2)
    a, b = env[j], env[j + 1]
    lam = 0.0 if b[0] == a[0] else (target[0] - a[0]) / (b[0] - a[0])
    lam = min(max(lam, 0.0), 1.0)
    t_a = _threshold_of_point(group, a)
    t_b = _threshold_of_point(group, b)
    return _mixture_rule(t_a, a, t_b, b, lam)


def _realize_by_chord(group, target) -> tuple[GroupThreshold, np.ndarray]:
    """Closest point to the target over all chords of the empirical ROC set."""
    pts = group["points"]
    thr = group["thresholds"]
    if len(pts) > 1200:
        # keep the pair enumeration quadratic-but-bounded: nearest points to the
        # target plus an even spread across the curve
        near = np.argsort(np.abs(pts - target).max(axis=1))[:800]
        spread = np.arange(0, len(pts), max(1, len(pts) // 400))
        idx = np.unique(np.concatenate([near, spread, [0, len(pts) - 1]]))
        pts, thr = pts[idx], thr[idx]
    n = len(pts)
    ai, bi = np.triu_indices(n, k=1)
    a, b = pts[ai], pts[bi]
    d = b - a
    denom = (d * d).sum(axis=1)
    lam = np.where(denom > 0, ((target - a) * d).sum(axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    lam = np.clip(lam, 0.0, 1.0)
    proj = a + lam[:, None] * d
    err = np.abs(proj - target).max(axis=1)
    k = int(np.argmin(err))
    return _mixture_rule(float(thr[ai[k]]), pts[ai[k]], float(thr[bi[k]]), pts[bi[k]],
                         float(lam[k]))


def _threshold_of_point(group, point) -> float:
    match = np.abs(group["points"] - point).max(axis=1) <= 1e-14
    idx = np.flatnonzero(match)
    if len(idx) == 0:
        raise MlpError("envelope vertex missing from the roc point set")
    # among thresholds hitting the same point, any is equivalent; take the largest
    return float(group["thresholds"][idx].max())


def apply_group_thresholds(scores, s, thresholds: GroupThresholds) -> PredictionSet:
    """Label by the group's (possibly randomized) threshold; seeded, reproducible."""
    scores = _check_scores(scores)
    s = np.asarray(s)
    bad = ~np.isin(s, (0, 1))
    if bad.any():
        raise MlpError(f"unknown group value {s[bad][0]!r}")
    rng = np.random.default_rng(thresholds.rng_seed)
    u = rng.random(len(scores))
    labels = np.zeros(len(scores), dtype=np.int64)
    for g, rule in ((0, thresholds.group0), (1, thresholds.group1)):
        mask = s == g
        t = np.where(u[mask] < rule.mix, rule.t_high, rule.t_low)
        labels[mask] = (scores[mask] > t).astype(np.int64)
    return PredictionSet(ids=np.arange(len(scores)), scores=scores.copy(),
                         labels=labels, s=s.copy())


def _check_scores(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if ((scores <= 0) | (scores >= 1)).any():
        raise MlpError("scores must lie strictly in (0, 1)")
    return scores
