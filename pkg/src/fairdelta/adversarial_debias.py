"""In-processing mitigation: classifier trained against an adversary on s.

The adversary sees the classifier score (Demographic Parity mode) or the score
together with the true label (Equalized Odds mode) and learns to predict the
sensitive attribute.  The classifier's update combines its prediction gradient
g_P with the adversary's gradient through the classifier g_A:

    g = g_P - proj_{g_A}(g_P) - alpha * g_A        (per parameter tensor)

With alpha = 0 and the projection disabled the adversary cannot influence the
classifier, and training reproduces train_biased bit for bit: both paths draw
init and shuffles from the same classifier seed stream, while the adversary
runs on its own stream.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fairness_metrics import DegenerateGroupError
from .mlp_core import (MlpError, MlpParams, Optimizer, TrainConfig, TrainedModel,
                       TrainingDivergedError, backward_from_dlogit,
                       backward_from_dscore, bce_loss, epoch_batches, fingerprint,
                       forward, forward_cached, init_params, interleave,
                       params_from_flat, parse_params_text)

PROJ_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class AdvConfig:
    mode: str = "DP"  # or "EO"
    adversary_weight: float = 0.3
    adversary_hidden: tuple[int, ...] = (16,)
    adversary_seed: int = 1
    adversary_lr: float = 1e-3
    adversary_steps: int = 1  # adversary updates per classifier update
    projection_enabled: bool = True
    classifier: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in ("DP", "EO"):
            raise MlpError(f"unknown adversary mode {self.mode!r}")
        if self.adversary_weight < 0:
            raise MlpError("adversary_weight must be non-negative")
        if self.adversary_steps < 1:
            raise MlpError("adversary_steps must be >= 1")

    @property
    def role(self) -> str:
        return "adversarial_dp" if self.mode == "DP" else "adversarial_eo"

    def adversary_train_config(self) -> TrainConfig:
        return TrainConfig(hidden_sizes=self.adversary_hidden,
                           learning_rate=self.adversary_lr,
                           epochs=self.classifier.epochs,
                           batch_size=self.classifier.batch_size,
                           seed=self.adversary_seed)

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        doc["adversary_hidden"] = list(self.adversary_hidden)
        doc["classifier"]["hidden_sizes"] = list(self.classifier.hidden_sizes)
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AdvConfig":
        doc = json.loads(text)
        doc["adversary_hidden"] = tuple(doc["adversary_hidden"])
        clf = doc["classifier"]
        clf["hidden_sizes"] = tuple(clf["hidden_sizes"])
        doc["classifier"] = TrainConfig(**clf)
        return cls(**doc)


@dataclass(frozen=True)
class AdvResult:
    """Trained classifier plus the adversary internals needed for diagnostics."""

    model: TrainedModel
    adversary: MlpParams
    config: AdvConfig


def adversary_input(mode: str, scores, y=None) -> np.ndarray:
    """Adversary features: (score) in DP mode, (score, y) in EO mode."""
    scores = np.asarray(scores, dtype=float)
    if ((scores <= 0) | (scores >= 1)).any():
        raise MlpError("scores must lie strictly in (0, 1)")
    if mode == "DP":
        return scores[:, None]
    if mode == "EO":
        if y is None:
            raise MlpError("EO mode needs ground-truth labels for the adversary")
        return np.column_stack([scores, np.asarray(y, dtype=float)])
    raise MlpError(f"unknown adversary mode {mode!r}")


def train_adversarial(train, config: AdvConfig = AdvConfig()) -> AdvResult:
    """Alternating training: one adversary step, then one classifier step, per batch."""
    X = np.asarray(train.X, dtype=float)
    y = np.asarray(train.y, dtype=float)
    s = np.asarray(train.s, dtype=float)
    if len(X) == 0:
        raise MlpError("empty training set")
    if y.min() == y.max():
        raise MlpError("training labels contain a single class")
    if s.min() == s.max():
        raise DegenerateGroupError("both sensitive groups must be present")

    clf_cfg = config.classifier
    alpha = config.adversary_weight
    rng = np.random.default_rng(clf_cfg.seed)
    clf_flat = [np.array(a) for a in init_params(rng, X.shape[1], clf_cfg).flat()]
    clf_opt = Optimizer([a.shape for a in clf_flat], clf_cfg)

    adv_cfg = config.adversary_train_config()
    adv_rng = np.random.default_rng(adv_cfg.seed)
    adv_in = 1 if config.mode == "DP" else 2
    adv_flat = [np.array(a) for a in init_params(adv_rng, adv_in, adv_cfg).flat()]
    adv_opt = Optimizer([a.shape for a in adv_flat], adv_cfg)

    for epoch in range(clf_cfg.epochs):
        for idx in epoch_batches(rng, len(X), clf_cfg.batch_size):
            Xb, yb, sb = X[idx], y[idx], s[idx]
            clf = params_from_flat(clf_flat)
            scores, cache = forward_cached(clf, Xb)
            loss = bce_loss(scores, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)

            # Adversary step(s) on the current scores.
            adv_X = adversary_input(config.mode, scores, yb)
            for _ in range(config.adversary_steps):
                adv = params_from_flat(adv_flat)
                adv_scores, adv_cache = forward_cached(adv, adv_X)
                adv_dlogit = (adv_scores - sb) / len(sb)
                agW, agb, _ = backward_from_dlogit(adv, adv_cache, adv_dlogit)
                adv_flat = adv_opt.step(adv_flat, interleave(agW, agb))

            # Classifier step against the freshly updated adversary.
            dlogit_p = (scores - yb) / len(yb)
            gW_p, gb_p, _ = backward_from_dlogit(clf, cache, dlogit_p)
            g_p = interleave(gW_p, gb_p)
            if alpha == 0.0 and not config.projection_enabled:
                update = g_p  # adversary terms vanish; keep the biased path bit-exact
            else:
                g_a = _adv_grad_through_classifier(config.mode, adv_flat, adv_X, sb,
                                                   clf, cache, scores)
                update = [_combine(gp, ga, alpha, config.projection_enabled)
                          for gp, ga in zip(g_p, g_a)]
            clf_flat = clf_opt.step(clf_flat, update)

    params = params_from_flat(clf_flat)
    model = TrainedModel(params=params, config=clf_cfg, role=config.role,
                         train_fingerprint=fingerprint(params))
    return AdvResult(model=model, adversary=params_from_flat(adv_flat), config=config)


def _adv_grad_through_classifier(mode, adv_flat, adv_X, sb, clf, cache, scores):
    """Gradient of the adversary's BCE w.r.t. classifier parameters."""
    adv = params_from_flat(adv_flat)
    adv_scores, adv_cache = forward_cached(adv, adv_X)
    adv_dlogit = (adv_scores - sb) / len(sb)
    _, _, d_inputs = backward_from_dlogit(adv, adv_cache, adv_dlogit,
                                          want_input_grad=True)
    dscore = d_inputs[:, 0]  # column 0 is the classifier score in both modes
    gW, gb, _ = backward_from_dscore(clf, cache, scores, dscore)
    return interleave(gW, gb)


def _combine(g_p: np.ndarray, g_a: np.ndarray, alpha: float, project: bool) -> np.ndarray:
    out = g_p
    if project:
        norm = float(np.sqrt((g_a * g_a).sum()))
        if norm >= PROJ_NORM_FLOOR:
            out = out - ((out * g_a).sum() / (norm * norm)) * g_a
    if alpha != 0.0:
        out = out - alpha * g_a
    return out


def adversary_accuracy(result: AdvResult, split) -> float:
    """How well the trained adversary recovers s on a split (diagnostic)."""
    scores = forward(result.model.params, split.X)
    return adversary_accuracy_from_scores(result.adversary, result.config.mode,
                                          scores, split.s, split.y)


def adversary_accuracy_from_scores(adversary: MlpParams, mode, scores, s, y=None) -> float:
    if adversary is None:
        raise MlpError("adversary was never trained")
    adv_X = adversary_input(mode, np.clip(scores, 1e-9, 1 - 1e-9), y)
    pred = (forward(adversary, adv_X) > 0.5).astype(np.int64)
    return float(np.mean(pred == np.asarray(s)))


def save_adversarial(result: AdvResult, path) -> None:
    """Classifier and adversary parameter blocks under one mode header."""
    path = Path(path)
    lines = [
        "fairdelta-adv v1",
        f"mode {result.config.mode}",
        "config " + result.config.to_json(),
        f"fingerprint {result.model.train_fingerprint}",
        "== classifier ==",
        result.model.params.canonical_text().rstrip("\n"),
        "== adversary ==",
        result.adversary.canonical_text().rstrip("\n"),
    ]
    path.write_text("\n".join(lines) + "\n")


def load_adversarial(path) -> AdvResult:
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines or lines[0] != "fairdelta-adv v1":
        raise MlpError(f"{path} is not a fairdelta adversarial file")
    config = AdvConfig.from_json(lines[2].split(" ", 1)[1])
    stored_fp = lines[3].split(" ", 1)[1]
    clf_block = text.split("== classifier ==\n")[1].split("== adversary ==\n")
    clf_params = parse_params_text(clf_block[0])
    adv_params = parse_params_text(clf_block[1])
    model = TrainedModel(params=clf_params, config=config.classifier,
                         role=config.role, train_fingerprint=fingerprint(clf_params))
    if model.train_fingerprint != stored_fp:
        raise MlpError(f"fingerprint mismatch in {path}: parameters were altered")
    return AdvResult(model=model, adversary=adv_params, config=config)
