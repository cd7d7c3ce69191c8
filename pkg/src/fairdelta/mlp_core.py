"""Small fully connected binary classifier with handwritten forward/backward.

Trains the baseline (biased) model and serves as the classifier inside
adversarial debiasing, which needs gradients of an external loss with respect
to the score and to the inputs.  Everything is plain numpy; determinism comes
from a single ``numpy.random.default_rng`` stream per training run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BCE_EPS = 1e-12


class MlpError(ValueError):
    """Shape mismatches, bad hyperparameters, non-finite inputs."""


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


@dataclass(frozen=True)
class MlpParams:
    """Layer weights (out x in) and biases; hidden layers use relu, output is logistic."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise MlpError("weights/biases layer count mismatch")
        if self.activation != "relu":
            raise MlpError(f"unsupported activation {self.activation!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise MlpError(f"layer {i}: weight rows != bias length")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise MlpError(f"layer {i}: input width does not chain")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise MlpError(f"layer {i}: non-finite parameter")
        if self.weights[-1].shape[0] != 1:
            raise MlpError("final layer must have exactly one output unit")
        for arr in (*self.weights, *self.biases):
            arr.setflags(write=False)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    def flat(self) -> list[np.ndarray]:
        """Interleaved [W0, b0, W1, b1, ...] view used by the optimizer."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def canonical_text(self) -> str:
        lines = ["mlp-params v1", f"activation {self.activation}",
                 f"layers {len(self.weights)}"]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            lines.append(f"layer {i} {W.shape[0]} {W.shape[1]}")
            lines.append("W " + " ".join(_fmt(v) for v in W.ravel()))
            lines.append("b " + " ".join(_fmt(v) for v in b))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (32, 32)
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0
    optimizer: str = "adam"  # or "sgd" (plain, no momentum)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise MlpError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.weight_init_scale <= 0:
            raise MlpError("learning_rate and weight_init_scale must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise MlpError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        doc["hidden_sizes"] = list(self.hidden_sizes)
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        doc = json.loads(text)
        doc["hidden_sizes"] = tuple(doc["hidden_sizes"])
        return cls(**doc)


@dataclass(frozen=True)
class TrainedModel:
    params: MlpParams
    config: TrainConfig
    role: str  # biased | lfr | adversarial_dp | adversarial_eo
    train_fingerprint: str

    def __post_init__(self):
        if self.role not in ("biased", "lfr", "adversarial_dp", "adversarial_eo"):
            raise MlpError(f"unknown model role {self.role!r}")


@dataclass(frozen=True)
class PredictionSet:
    """Scores and hard labels from one model on one split."""

    ids: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    s: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        if not (len(self.scores) == n == len(self.labels)):
            raise MlpError("ids/scores/labels length mismatch")
        for arr in (self.ids, self.scores, self.labels, self.s, self.y):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.ids)


def fingerprint(params) -> str:
    """sha256 over the canonical decimal-text serialization of the parameters."""
    return hashlib.sha256(params.canonical_text().encode()).hexdigest()


def init_params(rng: np.random.Generator, n_inputs: int, config: TrainConfig) -> MlpParams:
    """Scaled uniform fan-in init; biases start at zero (no rng draws for biases)."""
    dims = [n_inputs, *config.hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = config.weight_init_scale / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=tuple(weights), biases=tuple(biases))


def forward(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Scores in (0, 1), one per row of X."""
    scores, _ = forward_cached(params, X)
    return scores


def forward_cached(params: MlpParams, X: np.ndarray):
    """Forward pass keeping pre-activations and activations for backward."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise MlpError(f"expected (n, {params.n_inputs}) input, got {X.shape}")
    if not np.isfinite(X).all():
        raise MlpError("non-finite input")
    n_layers = len(params.weights)
    pre, acts = [], [X]
    a = X
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = _sigmoid(z) if i == n_layers - 1 else np.maximum(z, 0.0)
        acts.append(a)
    return acts[-1][:, 0], (pre, acts)


def backward_from_dlogit(params: MlpParams, cache, dlogit: np.ndarray,
                         want_input_grad: bool = False):
    """Backpropagate d(loss)/d(final pre-activation) through the network.

    Returns (weight grads, bias grads, input grad or None).
    """
    pre, acts = cache
    delta = np.asarray(dlogit, dtype=float)[:, None]
    gW, gb = [None] * len(params.weights), [None] * len(params.weights)
    dX = None
    for i in reversed(range(len(params.weights))):
        gW[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0)
        elif want_input_grad:
            dX = delta @ params.weights[0]
    return gW, gb, dX


def backward_from_dscore(params: MlpParams, cache, scores, dscore,
                         want_input_grad: bool = False):
    """Same as :func:`backward_from_dlogit` but the upstream grad is d(loss)/d(score)."""
    dlogit = np.asarray(dscore, dtype=float) * scores * (1.0 - scores)
    return backward_from_dlogit(params, cache, dlogit, want_input_grad)


def bce_loss(scores: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(scores, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_and_grads(params: MlpParams, batch_X: np.ndarray, batch_y: np.ndarray):
    """Mean binary cross-entropy and its exact gradients for one batch."""
    batch_y = np.asarray(batch_y, dtype=float)
    if len(batch_y) == 0:
        raise MlpError("empty batch")
    if ((batch_y != 0) & (batch_y != 1)).any():
        raise MlpError("labels must be in {0, 1}")
    scores, cache = forward_cached(params, batch_X)
    loss = bce_loss(scores, batch_y)
    dlogit = (scores - batch_y) / len(batch_y)
    gW, gb, _ = backward_from_dlogit(params, cache, dlogit)
    return loss, (gW, gb)


class Optimizer:
    """Adaptive-moment (default) or plain stochastic gradient steps on a param list."""

    def __init__(self, shapes, config: TrainConfig):
        self.config = config
        self.t = 0
        if config.optimizer == "adam":
            self.m = [np.zeros(s) for s in shapes]
            self.v = [np.zeros(s) for s in shapes]

    def step(self, values: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        cfg = self.config
        self.t += 1
        out = []
        if cfg.optimizer == "sgd":
            for val, g in zip(values, grads):
                out.append(val - cfg.learning_rate * g)
            return out
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for i, (val, g) in enumerate(zip(values, grads)):
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            out.append(val - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
        return out


def interleave(gW, gb) -> list[np.ndarray]:
    out = []
    for W, b in zip(gW, gb):
        out.extend((W, b))
    return out


def params_from_flat(flat: list[np.ndarray], activation: str = "relu") -> MlpParams:
    weights = tuple(np.array(flat[i]) for i in range(0, len(flat), 2))
    biases = tuple(np.array(flat[i]) for i in range(1, len(flat), 2))
    return MlpParams(weights=weights, biases=biases, activation=activation)


def epoch_batches(rng: np.random.Generator, n: int, batch_size: int):
    """Yield index arrays for one epoch; consumes exactly one permutation draw."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train_biased(train, config: TrainConfig = TrainConfig()) -> TrainedModel:
    """Train the baseline classifier on a DataSplit (or anything with .X/.y)."""
    return _train_plain(train.X, train.y, config, role="biased")


def _train_plain(X, y, config: TrainConfig, role: str) -> TrainedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise MlpError("empty training set")
    if y.min() == y.max():
        raise MlpError("training labels contain a single class")
    rng = np.random.default_rng(config.seed)
    params = init_params(rng, X.shape[1], config)
    flat = [np.array(a) for a in params.flat()]
    opt = Optimizer([a.shape for a in flat], config)
    for epoch in range(config.epochs):
        for idx in epoch_batches(rng, len(X), config.batch_size):
            cur = params_from_flat(flat)
            loss, (gW, gb) = loss_and_grads(cur, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            flat = opt.step(flat, interleave(gW, gb))
    params = params_from_flat(flat)
    return TrainedModel(params=params, config=config, role=role,
                        train_fingerprint=fingerprint(params))


def predict(model: TrainedModel, X: np.ndarray, threshold: float = 0.5) -> PredictionSet:
    """Hard labels by strict score > threshold; ids default to row positions."""
    if not 0.0 < threshold < 1.0:
        raise MlpError("threshold must lie in (0, 1)")
    scores = forward(model.params, X)
    return PredictionSet(ids=np.arange(len(scores)),
                         scores=scores,
                         labels=(scores > threshold).astype(np.int64))


def predict_split(model: TrainedModel, split, threshold: float = 0.5) -> PredictionSet:
    """Like :func:`predict` but carries the split's ids, s and y along."""
    base = predict(model, split.X, threshold)
    return PredictionSet(ids=split.ids, scores=base.scores, labels=base.labels,
                         s=split.s, y=split.y)


# ---------------------------------------------------------------------------
# Persistence: self-describing text, architecture header + row-major weights.
# ---------------------------------------------------------------------------

def save_model(model: TrainedModel, path) -> None:
    path = Path(path)
    lines = [
        "fairdelta-mlp v1",
        f"role {model.role}",
        f"fingerprint {model.train_fingerprint}",
        "config " + model.config.to_json(),
        model.params.canonical_text().rstrip("\n"),
    ]
    path.write_text("\n".join(lines) + "\n")


def load_model(path) -> TrainedModel:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "fairdelta-mlp v1":
        raise MlpError(f"{path} is not a fairdelta model file")
    role = lines[1].split(" ", 1)[1]
    stored_fp = lines[2].split(" ", 1)[1]
    config = TrainConfig.from_json(lines[3].split(" ", 1)[1])
    params = parse_params_text("\n".join(lines[4:]))
    model = TrainedModel(params=params, config=config, role=role,
                         train_fingerprint=fingerprint(params))
    if model.train_fingerprint != stored_fp:
        raise MlpError(f"fingerprint mismatch in {path}: parameters were altered")
    return model


def parse_params_text(text: str) -> MlpParams:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "mlp-params v1":
        raise MlpError("not an mlp-params block")
    activation = lines[1].split()[1]
    n_layers = int(lines[2].split()[1])
    weights, biases = [], []
    pos = 3
    for _ in range(n_layers):
        _, _, out_s, in_s = lines[pos].split()
        out_n, in_n = int(out_s), int(in_s)
        W = np.array(lines[pos + 1].split()[1:], dtype=float).reshape(out_n, in_n)
        b = np.array(lines[pos + 2].split()[1:], dtype=float)
        weights.append(W)
        biases.append(b)
        pos += 3
    return MlpParams(weights=tuple(weights), biases=tuple(biases), activation=activation)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fmt(v: float) -> str:
    return "%.17g" % float(v)
