"""Network core: gradients against finite differences, training, persistence."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linprog

from fairdelta.mlp_core import (
    MlpError,
    MlpParams,
    Optimizer,
    TrainConfig,
    TrainingDivergedError,
    backward_from_dlogit,
    backward_from_dscore,
    bce_loss,
    epoch_batches,
    fingerprint,
    forward,
    forward_cached,
    init_params,
    interleave,
    load_model,
    loss_and_grads,
    params_from_flat,
    predict,
    predict_split,
    save_model,
    train_biased,
)


def random_params(rng, n_inputs, hidden=(4, 3)):
    cfg = TrainConfig(hidden_sizes=tuple(hidden))
    params = init_params(rng, n_inputs, cfg)
    # shift biases off zero so their gradients are exercised at generic points
    biases = tuple(b + rng.normal(0, 0.1, size=b.shape) for b in params.biases)
    return MlpParams(weights=params.weights, biases=biases)


def numeric_loss_grads(params, X, y, eps=1e-6):
    """Central finite differences of the mean BCE over every parameter."""
    flat = [np.array(a) for a in params.flat()]
    grads = []
    for t in range(len(flat)):
        g = np.zeros_like(flat[t])
        for idx in np.ndindex(flat[t].shape):
            for sign in (+1, -1):
                flat[t][idx] += sign * eps
                score = forward(params_from_flat(flat), X)
                g[idx] += sign * bce_loss(score, y) / (2 * eps)
                flat[t][idx] -= sign * eps
        grads.append(g)
    return grads


# -- gradients ---------------------------------------------------------------

def test_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(20):
        n, m = 8, 3
        params = random_params(rng, m)
        X = rng.normal(size=(n, m))
        y = rng.integers(0, 2, size=n).astype(float)
        _, (gW, gb) = loss_and_grads(params, X, y)
        analytic = interleave(gW, gb)
        numeric = numeric_loss_grads(params, X, y)
        for a, b in zip(analytic, numeric):
            scale = max(np.abs(b).max(), 1e-8)
            worst = max(worst, np.abs(a - b).max() / scale)
    assert worst < 1e-5


def test_input_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    n, m = 6, 4
    params = random_params(rng, m)
    X = rng.normal(size=(n, m))
    y = rng.integers(0, 2, size=n).astype(float)
    scores, cache = forward_cached(params, X)
    dlogit = (scores - y) / n
    _, _, dX = backward_from_dlogit(params, cache, dlogit, want_input_grad=True)
    eps = 1e-6
    num = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        for sign in (+1, -1):
            X[idx] += sign * eps
            num[idx] += sign * bce_loss(forward(params, X), y) / (2 * eps)
            X[idx] -= sign * eps
    assert np.abs(dX - num).max() < 1e-6


def test_dscore_route_equals_dlogit_route():
    rng = np.random.default_rng(2)
    params = random_params(rng, 3)
    X = rng.normal(size=(5, 3))
    scores, cache = forward_cached(params, X)
    dscore = rng.normal(size=5)
    dlogit = dscore * scores * (1.0 - scores)
    a = backward_from_dscore(params, cache, scores, dscore, want_input_grad=True)
    b = backward_from_dlogit(params, cache, dlogit, want_input_grad=True)
    for ga, gb_ in zip(a[0] + a[1] + [a[2]], b[0] + b[1] + [b[2]]):
        assert np.allclose(ga, gb_, atol=1e-14)


# -- forward pass and loss ---------------------------------------------------

def test_forward_zero_weights_gives_half():
    params = MlpParams(weights=(np.zeros((1, 3)),), biases=(np.zeros(1),))
    X = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(forward(params, X), 0.5)


def test_forward_rejects_wrong_width_and_non_finite():
    params = MlpParams(weights=(np.zeros((1, 3)),), biases=(np.zeros(1),))
    with pytest.raises(MlpError, match="expected"):
        forward(params, np.zeros((2, 4)))
    with pytest.raises(MlpError, match="non-finite"):
        forward(params, np.array([[1.0, np.nan, 0.0]]))


def test_sigmoid_is_stable_at_extreme_logits():
    params = MlpParams(weights=(np.array([[1000.0]]),), biases=(np.zeros(1),))
    scores = forward(params, np.array([[1.0], [-1.0]]))
    assert np.all(np.isfinite(scores))
    assert scores[0] == pytest.approx(1.0)
    assert scores[1] == pytest.approx(0.0)


def test_bce_known_values():
    assert bce_loss(np.array([0.5]), np.array([1.0])) == pytest.approx(np.log(2.0))
    assert bce_loss(np.array([0.25, 0.75]), np.array([0.0, 1.0])) == pytest.approx(
        -np.log(0.75) / 2 - np.log(0.75) / 2)
    # clipping keeps a confidently wrong score finite
    assert bce_loss(np.array([1.0]), np.array([0.0])) == pytest.approx(-np.log(1e-12))


def test_loss_and_grads_rejects_bad_batches():
    rng = np.random.default_rng(3)
    params = random_params(rng, 2)
    with pytest.raises(MlpError, match="empty"):
        loss_and_grads(params, np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(MlpError, match="labels"):
        loss_and_grads(params, np.zeros((2, 2)), np.array([0.0, 2.0]))


# -- optimizer and batching --------------------------------------------------

def test_sgd_step_is_plain_descent():
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.5)
    opt = Optimizer([(2,)], cfg)
    out = opt.step([np.array([1.0, -1.0])], [np.array([0.2, -0.4])])
    assert np.allclose(out[0], [0.9, -0.8])


def test_adam_first_step_moves_by_learning_rate():
    cfg = TrainConfig(optimizer="adam", learning_rate=0.01)
    opt = Optimizer([(1,)], cfg)
    out = opt.step([np.array([0.0])], [np.array([3.0])])
    # bias correction makes the first step lr * g / (|g| + eps)
    assert out[0][0] == pytest.approx(-0.01, rel=1e-6)


def test_full_batch_sgd_on_convex_model_decreases_loss():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(64, 3))
    w_true = np.array([1.5, -2.0, 0.5])
    y = (X @ w_true > 0).astype(float)
    cfg = TrainConfig(hidden_sizes=(), optimizer="sgd", learning_rate=0.5)
    params = init_params(np.random.default_rng(0), 3, cfg)
    flat = [np.array(a) for a in params.flat()]
    opt = Optimizer([a.shape for a in flat], cfg)
    losses = []
    for _ in range(40):
        loss, (gW, gb) = loss_and_grads(params_from_flat(flat), X, y)
        losses.append(loss)
        flat = opt.step(flat, interleave(gW, gb))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0] / 2


def test_epoch_batches_partition_all_indices():
    rng = np.random.default_rng(5)
    batches = list(epoch_batches(rng, 23, 7))
    assert [len(b) for b in batches] == [7, 7, 7, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(23))


# -- training ----------------------------------------------------------------

def separable_problem(rng, n=400, m=5):
    X = rng.normal(size=(n, m))
    w = rng.normal(size=m)
    margin = 0.3
    raw = X @ w
    keep = np.abs(raw) > margin
    X, raw = X[keep], raw[keep]
    y = (raw > 0).astype(float)
    # independent certificate of separability: a feasible point of the margin LP
    signed = (2 * y - 1)[:, None] * np.hstack([X, np.ones((len(X), 1))])
    res = linprog(c=np.zeros(m + 1), A_ub=-signed, b_ub=-np.ones(len(X)),
                  bounds=[(None, None)] * (m + 1), method="highs")
    assert res.success, "sanity: generated data must be linearly separable"
    return X, y


def test_training_fits_separable_data():
    X, y = separable_problem(np.random.default_rng(6))
    split = type("S", (), {"X": X, "y": y})()
    model = train_biased(split, TrainConfig(hidden_sizes=(8,), epochs=120,
                                            learning_rate=0.01, batch_size=64,
                                            seed=0))
    preds = predict(model, X)
    assert (preds.labels == y).mean() >= 0.99


def test_training_is_deterministic_per_seed(small_splits):
    train, _ = small_splits
    cfg = TrainConfig(hidden_sizes=(8,), epochs=3, seed=11)
    a = train_biased(train, cfg)
    b = train_biased(train, cfg)
    c = train_biased(train, TrainConfig(hidden_sizes=(8,), epochs=3, seed=12))
    assert a.train_fingerprint == b.train_fingerprint
    assert a.train_fingerprint != c.train_fingerprint


def test_duplicating_rows_leaves_full_batch_training_unchanged():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 3))
    y = (X @ np.array([1.0, -1.0, 0.5]) > 0).astype(float)
    twice = type("S", (), {"X": np.vstack([X, X]), "y": np.concatenate([y, y])})()
    once = type("S", (), {"X": X, "y": y})()
    cfg = dict(hidden_sizes=(4,), epochs=10, learning_rate=0.01, seed=0)
    m1 = train_biased(once, TrainConfig(batch_size=40, **cfg))
    m2 = train_biased(twice, TrainConfig(batch_size=80, **cfg))
    for a, b in zip(m1.params.flat(), m2.params.flat()):
        assert np.allclose(a, b, atol=1e-7)


def test_single_class_training_rejected():
    split = type("S", (), {"X": np.zeros((5, 2)), "y": np.ones(5)})()
    with pytest.raises(MlpError, match="single class"):
        train_biased(split)


def test_divergence_reports_epoch():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(32, 4)) * 10
    y = rng.integers(0, 2, size=32).astype(float)
    split = type("S", (), {"X": X, "y": y})()
    cfg = TrainConfig(hidden_sizes=(8, 8), learning_rate=1e200,
                      epochs=5, batch_size=32, seed=0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError) as err:
            train_biased(split, cfg)
    assert 0 <= err.value.epoch < 5


# -- prediction --------------------------------------------------------------

def test_predict_threshold_is_strict():
    params = MlpParams(weights=(np.zeros((1, 2)),), biases=(np.zeros(1),))
    model = type("M", (), {"params": params})()
    preds = predict(model, np.zeros((3, 2)), threshold=0.5)
    assert np.allclose(preds.scores, 0.5)
    assert preds.labels.tolist() == [0, 0, 0]  # exactly-at-threshold is negative


def test_predict_rejects_degenerate_threshold(small_model, small_splits):
    _, test = small_splits
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(MlpError, match="threshold"):
            predict(small_model, test.X, threshold=bad)


def test_predict_split_carries_metadata(small_model, small_splits):
    _, test = small_splits
    preds = predict_split(small_model, test)
    assert np.array_equal(preds.ids, test.ids)
    assert np.array_equal(preds.s, test.s)
    assert np.array_equal(preds.y, test.y)
    assert np.array_equal(preds.labels, (preds.scores > 0.5).astype(int))


# -- persistence -------------------------------------------------------------

def test_model_round_trip_preserves_scores_exactly(tmp_path, small_model, small_splits):
    _, test = small_splits
    path = tmp_path / "model.txt"
    save_model(small_model, path)
    again = load_model(path)
    assert again.role == small_model.role
    assert again.train_fingerprint == small_model.train_fingerprint
    assert fingerprint(again.params) == fingerprint(small_model.params)
    assert np.array_equal(forward(again.params, test.X),
                          forward(small_model.params, test.X))
    assert again.config == small_model.config


def test_model_load_rejects_tampered_weights(tmp_path, small_model):
    path = tmp_path / "model.txt"
    save_model(small_model, path)
    lines = path.read_text().splitlines()
    row = next(i for i, line in enumerate(lines) if line.startswith("W "))
    parts = lines[row].split()
    parts[1] = "%.17g" % (float(parts[1]) + 1.0)
    lines[row] = " ".join(parts)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MlpError, match="fingerprint"):
        load_model(path)


def test_config_json_round_trip():
    cfg = TrainConfig(hidden_sizes=(32, 32), learning_rate=0.003, epochs=7,
                      batch_size=64, seed=9, optimizer="sgd")
    assert TrainConfig.from_json(cfg.to_json()) == cfg
