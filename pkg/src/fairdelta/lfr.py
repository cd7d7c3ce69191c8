"""Prototype-based fair representation learning (pre-processing mitigation).

Instances are softly assigned to K prototypes through a softmax over negative
squared Euclidean distances.  The objective trades off reconstruction of X,
prediction of y through per-prototype labels, and removal of group information
from the assignment vector.  Optimized full-batch with adaptive moments and
analytic gradients.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .fairness_metrics import DegenerateGroupError
from .mlp_core import (BCE_EPS, MlpError, Optimizer, PredictionSet, TrainConfig,
                       TrainedModel, TrainingDivergedError, bce_loss, fingerprint)


@dataclass(frozen=True)
class LfrParams:
    """Fitted prototypes with per-prototype label scores and objective weights."""

    prototypes: np.ndarray  # K x m
    prototype_labels: np.ndarray  # K, in [0, 1]
    loss_weights: tuple[float, float, float]  # (A_x, A_y, A_z)
    K: int
    seed: int

    def __post_init__(self):
        if self.K < 1 or self.prototypes.shape[0] != self.K:
            raise MlpError("prototype count mismatch")
        if len(self.prototype_labels) != self.K:
            raise MlpError("prototype_labels length mismatch")
        if ((self.prototype_labels < 0) | (self.prototype_labels > 1)).any():
            raise MlpError("prototype_labels must lie in [0, 1]")
        if any(w < 0 for w in self.loss_weights):
            raise MlpError("loss weights must be non-negative")
        self.prototypes.setflags(write=False)
        self.prototype_labels.setflags(write=False)

    @property
    def m(self) -> int:
        return self.prototypes.shape[1]

    def canonical_text(self) -> str:
        lines = ["lfr-params v1",
                 f"K {self.K} m {self.m} seed {self.seed}",
                 "weights " + " ".join(_fmt(w) for w in self.loss_weights),
                 "labels " + " ".join(_fmt(v) for v in self.prototype_labels)]
        for k in range(self.K):
            lines.append(f"proto {k} " + " ".join(_fmt(v) for v in self.prototypes[k]))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LfrConfig:
    K: int = 10
    reconstruct_weight: float = 0.01
    target_weight: float = 10.0
    fairness_weight: float = 15.0
    iterations: int = 1500
    learning_rate: float = 0.05
    seed: int = 0

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.reconstruct_weight, self.target_weight, self.fairness_weight)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LfrConfig":
        return cls(**json.loads(text))


def lfr_assign(prototypes: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Soft assignments M (n x K): softmax over -||x_i - v_k||^2 per row."""
    X = np.asarray(X, dtype=float)
    prototypes = np.asarray(prototypes, dtype=float)
    if X.ndim != 2 or X.shape[1] != prototypes.shape[1]:
        raise MlpError(f"expected (n, {prototypes.shape[1]}) input, got {X.shape}")
    d2 = cdist(X, prototypes, metric="sqeuclidean")
    if not np.isfinite(d2).all():
        raise MlpError("non-finite prototype distances")
    e = -d2
    e -= e.max(axis=1, keepdims=True)
    M = np.exp(e)
    M /= M.sum(axis=1, keepdims=True)
    return M


def lfr_loss(params: LfrParams, X, s, y):
    """(total, L_x, L_y, L_z) on a batch; L_z sums group mean gaps over prototypes."""
    M = lfr_assign(params.prototypes, X)
    return _loss_terms(M, params.prototypes, params.prototype_labels,
                       params.loss_weights, np.asarray(X, float),
                       np.asarray(s), np.asarray(y, float))


def _loss_terms(M, V, w, weights, X, s, y):
    a_x, a_y, a_z = weights
    mask0, mask1 = s == 0, s == 1
    if not mask0.any() or not mask1.any():
        raise DegenerateGroupError("both groups must be present for the fairness term")
    x_hat = M @ V
    l_x = float(np.mean((x_hat - X) ** 2))
    y_hat = M @ w
    l_y = bce_loss(y_hat, y)
    gap = M[mask0].mean(axis=0) - M[mask1].mean(axis=0)
    l_z = float(np.abs(gap).sum())
    return a_x * l_x + a_y * l_y + a_z * l_z, l_x, l_y, l_z


def _loss_and_grads(V, u, weights, X, s, y):
    """Objective and analytic gradients w.r.t. prototypes V and label logits u."""
    a_x, a_y, a_z = weights
    n, m = X.shape
    w = _sigmoid(u)
    M = lfr_assign(V, X)
    mask0, mask1 = s == 0, s == 1
    if not mask0.any() or not mask1.any():
        raise DegenerateGroupError("both groups must be present for the fairness term")

    x_hat = M @ V
    y_hat = M @ w
    gap = M[mask0].mean(axis=0) - M[mask1].mean(axis=0)
    l_x = float(np.mean((x_hat - X) ** 2))
    l_y = bce_loss(y_hat, y)
    l_z = float(np.abs(gap).sum())
    total = a_x * l_x + a_y * l_y + a_z * l_z

    # dL/dM, summing the three objective paths into one n x K matrix.
    g_x = (2.0 / (n * m)) * (x_hat - X)  # dL_x/dx_hat
    g_y = a_y * (y_hat - y) / np.clip(y_hat * (1.0 - y_hat), 1e-300, None) / n
    gamma = a_x * (g_x @ V.T) + g_y[:, None] * w[None, :]
    sign = np.sign(gap)
    gamma[mask0] += a_z * sign[None, :] / mask0.sum()
    gamma[mask1] -= a_z * sign[None, :] / mask1.sum()

    # Through the softmax: psi = dL/de with e_ik = -||x_i - v_k||^2.
    row = (gamma * M).sum(axis=1, keepdims=True)
    psi = M * (gamma - row)

    # de_ik/dv_k = 2(x_i - v_k); plus the explicit x_hat = M V path.
    gV = a_x * (M.T @ g_x) + 2.0 * (psi.T @ X - psi.sum(axis=0)[:, None] * V)
    gu = w * (1.0 - w) * (M.T @ g_y)
    return total, (l_x, l_y, l_z), gV, gu


def fit_lfr(train, config: LfrConfig = LfrConfig(),
            iterations: int | None = None) -> tuple[LfrParams, TrainedModel]:
    """Fit prototypes and labels on a DataSplit; returns params plus a TrainedModel."""
    steps = config.iterations if iterations is None else iterations
    X = np.asarray(train.X, dtype=float)
    s = np.asarray(train.s)
    y = np.asarray(train.y, dtype=float)
    rng = np.random.default_rng(config.seed)
    V = rng.normal(0.0, 1.0, size=(config.K, X.shape[1]))
    u = rng.normal(0.0, 0.1, size=config.K)

    opt_cfg = TrainConfig(hidden_sizes=(), learning_rate=config.learning_rate,
                          epochs=1, batch_size=len(X), seed=config.seed)
    opt = Optimizer([V.shape, u.shape], opt_cfg)
    for it in range(steps):
        total, _, gV, gu = _loss_and_grads(V, u, config.weights, X, s, y)
        if not np.isfinite(total):
            raise TrainingDivergedError(it, total)
        V, u = opt.step([V, u], [gV, gu])

    params = LfrParams(prototypes=V, prototype_labels=_sigmoid(u),
                       loss_weights=config.weights, K=config.K, seed=config.seed)
    model = TrainedModel(params=params, config=config, role="lfr",
                         train_fingerprint=fingerprint(params))
    return params, model


def lfr_score(params: LfrParams, X: np.ndarray) -> np.ndarray:
    return lfr_assign(params.prototypes, X) @ params.prototype_labels


def lfr_predict(params: LfrParams, X, threshold: float = 0.5) -> PredictionSet:
    """Score = assignment-weighted prototype labels; strict > threshold labeling."""
    if not 0.0 < threshold < 1.0:
        raise MlpError("threshold must lie in (0, 1)")
    scores = lfr_score(params, np.asarray(X, dtype=float))
    return PredictionSet(ids=np.arange(len(scores)), scores=scores,
                         labels=(scores > threshold).astype(np.int64))


def lfr_predict_split(params: LfrParams, split, threshold: float = 0.5) -> PredictionSet:
    base = lfr_predict(params, split.X, threshold)
    return PredictionSet(ids=split.ids, scores=base.scores, labels=base.labels,
                         s=split.s, y=split.y)


def save_lfr(params: LfrParams, path, config: LfrConfig | None = None) -> None:
    path = Path(path)
    lines = ["fairdelta-lfr v1"]
    if config is not None:
        lines.append("config " + config.to_json())
    lines.append(params.canonical_text().rstrip("\n"))
    path.write_text("\n".join(lines) + "\n")


def load_lfr(path) -> tuple[LfrParams, LfrConfig | None]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "fairdelta-lfr v1":
        raise MlpError(f"{path} is not a fairdelta lfr file")
    pos = 1
    config = None
    if lines[pos].startswith("config "):
        config = LfrConfig.from_json(lines[pos].split(" ", 1)[1])
        pos += 1
    if lines[pos] != "lfr-params v1":
        raise MlpError("missing lfr-params block")
    head = lines[pos + 1].split()
    K, seed = int(head[1]), int(head[5])
    weights = tuple(float(v) for v in lines[pos + 2].split()[1:])
    labels = np.array(lines[pos + 3].split()[1:], dtype=float)
    protos = [np.array(lines[pos + 4 + k].split()[2:], dtype=float) for k in range(K)]
    params = LfrParams(prototypes=np.vstack(protos), prototype_labels=labels,
                       loss_weights=weights, K=K, seed=seed)
    return params, config


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fmt(v: float) -> str:
    return "%.17g" % float(v)
