"""Two-class partial least squares discriminant analysis (PLS1, iterative deflation).

Used to characterize which subpopulations two mitigation methods target: fit
on the instances changed by exactly one of the two methods (overlap excluded),
with class labels naming the method.  Components maximize covariance between
the centered features and the centered +/-1 class coding; a linear response
over all components serves as the discriminant score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

_RANK_TOL = 1e-12


class PlsError(ValueError):
    """Single-class labels, dimension mismatch, too few rows."""


@dataclass(frozen=True)
class PlsModel:
    weights: np.ndarray  # m x c, unit-norm columns
    loadings: np.ndarray  # m x c
    y_loadings: np.ndarray  # c
    rotation: np.ndarray  # m x c, projects centered X straight to scores
    x_mean: np.ndarray
    y_mean: float
    c: int  # components actually fitted
    requested_c: int
    rank_deficient: bool

    def __post_init__(self):
        for arr in (self.weights, self.loadings, self.y_loadings,
                    self.rotation, self.x_mean):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        return self.weights.shape[0]


def fit_plsda(X: np.ndarray, labels, c: int = 2) -> PlsModel:
    """Fit on rows of X with binary class labels (coded +/-1 and centered)."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise PlsError("X and labels disagree in length")
    if c < 1:
        raise PlsError("component count must be >= 1")
    if len(X) <= c:
        raise PlsError(f"need more than {c} rows to fit {c} components")
    classes = np.unique(labels)
    if len(classes) != 2 or not np.isin(classes, (0, 1)).all():
        raise PlsError("labels must contain both classes 0 and 1")

    x_mean = X.mean(axis=0)
    Xk = X - x_mean
    y_signed = np.where(labels == 1, 1.0, -1.0)
    y_mean = float(y_signed.mean())
    yk = y_signed - y_mean

    m = X.shape[1]
    W = np.zeros((m, c))
    P = np.zeros((m, c))
    q = np.zeros(c)
    fitted = 0
    for k in range(c):
        w = Xk.T @ yk
        norm = np.linalg.norm(w)
        if norm < _RANK_TOL:
            break
        w = w / norm
        # deterministic sign: largest-magnitude coordinate is positive
        w = w * np.sign(w[np.argmax(np.abs(w))])
        t = Xk @ w
        tt = float(t @ t)
        if tt < _RANK_TOL:
            break
        p = Xk.T @ t / tt
        W[:, k] = w
        P[:, k] = p
        q[k] = float(yk @ t) / tt
        Xk = Xk - np.outer(t, p)
        fitted = k + 1

    if fitted == 0:
        raise PlsError("X carries no covariance with the labels (rank 0)")
    W, P, q = W[:, :fitted], P[:, :fitted], q[:fitted]
    rotation = W @ np.linalg.inv(P.T @ W)
    return PlsModel(weights=W, loadings=P, y_loadings=q, rotation=rotation,
                    x_mean=x_mean, y_mean=y_mean, c=fitted, requested_c=c,
                    rank_deficient=fitted < c)


def project(model: PlsModel, X) -> np.ndarray:
    """Component scores, n x c."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.m:
        raise PlsError(f"expected (n, {model.m}) input, got {X.shape}")
    return (X - model.x_mean) @ model.rotation


def discriminant_response(model: PlsModel, X) -> np.ndarray:
    """Fitted linear response over all components (higher = more class-1-like)."""
    return project(model, X) @ model.y_loadings + model.y_mean


def discriminant_auc(model: PlsModel, X, labels) -> float:
    """Tie-aware rank AUC of the discriminant response against the labels."""
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == 0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise PlsError("auc needs both classes")
    response = discriminant_response(model, X)
    ranks = rankdata(response)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def feature_correlations(model: PlsModel, X) -> np.ndarray:
    """Pearson correlation of each feature with each component score.

    Constant features (or degenerate score columns) get 0 by convention.
    """
    X = np.asarray(X, dtype=float)
    scores = project(model, X)
    xc = X - X.mean(axis=0)
    tc = scores - scores.mean(axis=0)
    x_sd = np.sqrt((xc * xc).sum(axis=0))
    t_sd = np.sqrt((tc * tc).sum(axis=0))
    cov = xc.T @ tc
    denom = np.outer(x_sd, t_sd)
    out = np.zeros_like(cov)
    ok = denom > _RANK_TOL
    out[ok] = cov[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def changed_populations(split, delta_a, delta_b):
    """Feature rows and class labels for instances changed by exactly one method.

    Class 1 marks instances changed only by ``delta_a``; the overlap is
    excluded.  Rows come back ordered by instance id.
    """
    set_a = delta_a.id_set()
    set_b = delta_b.id_set()
    only_a = set_a - set_b
    only_b = set_b - set_a
    wanted = sorted(only_a | only_b)
    if not wanted:
        raise PlsError("the two methods changed exactly the same instances")
    id_to_row = {int(i): r for r, i in enumerate(split.ids)}
    try:
        rows = np.array([id_to_row[i] for i in wanted], dtype=np.int64)
    except KeyError as exc:
        raise PlsError(f"changed id {exc.args[0]} is not in the audited split") from None
    labels = np.array([1 if i in only_a else 0 for i in wanted], dtype=np.int64)
    return split.X[rows], labels, np.array(wanted, dtype=np.int64)
