"""Prototype representation learner: assignments, loss oracle, gradients, fitting."""

from __future__ import annotations

import numpy as np
import pytest

from fairdelta.fairness_metrics import DegenerateGroupError, p_rule
from fairdelta.lfr import (
    LfrConfig,
    LfrParams,
    _loss_and_grads,
    fit_lfr,
    lfr_assign,
    lfr_loss,
    lfr_predict,
    lfr_predict_split,
    lfr_score,
    load_lfr,
    save_lfr,
)
from fairdelta.mlp_core import MlpError


def make_params(rng, K=4, m=3, weights=(0.01, 10.0, 15.0)):
    return LfrParams(prototypes=rng.normal(size=(K, m)),
                     prototype_labels=rng.uniform(0.1, 0.9, K),
                     loss_weights=weights, K=K, seed=0)


def naive_loss(params, X, s, y):
    """Straight re-derivation with explicit loops; no shared code with the module."""
    K, m = params.K, params.m
    n = len(X)
    M = np.zeros((n, K))
    for i in range(n):
        d2 = [sum((X[i, j] - params.prototypes[k, j]) ** 2 for j in range(m))
              for k in range(K)]
        e = [np.exp(-d) for d in d2]
        M[i] = np.array(e) / sum(e)
    l_x = 0.0
    for i in range(n):
        for j in range(m):
            x_hat = sum(M[i, k] * params.prototypes[k, j] for k in range(K))
            l_x += (x_hat - X[i, j]) ** 2
    l_x /= n * m
    l_y = 0.0
    for i in range(n):
        y_hat = min(max(sum(M[i, k] * params.prototype_labels[k] for k in range(K)),
                        1e-12), 1 - 1e-12)
        l_y += -(y[i] * np.log(y_hat) + (1 - y[i]) * np.log(1 - y_hat))
    l_y /= n
    l_z = 0.0
    for k in range(K):
        mean0 = np.mean([M[i, k] for i in range(n) if s[i] == 0])
        mean1 = np.mean([M[i, k] for i in range(n) if s[i] == 1])
        l_z += abs(mean0 - mean1)
    a_x, a_y, a_z = params.loss_weights
    return a_x * l_x + a_y * l_y + a_z * l_z, l_x, l_y, l_z


# -- assignments -------------------------------------------------------------

def test_assign_single_prototype_gets_all_weight():
    M = lfr_assign(np.array([[0.0, 0.0]]), np.random.default_rng(0).normal(size=(5, 2)))
    assert np.allclose(M, 1.0)


def test_assign_equidistant_prototypes_share_weight():
    protos = np.array([[1.0, 0.0], [-1.0, 0.0]])
    M = lfr_assign(protos, np.array([[0.0, 0.0], [0.0, 3.0]]))
    assert np.allclose(M, 0.5)


def test_assign_rows_sum_to_one_and_prefer_closest():
    rng = np.random.default_rng(1)
    protos = rng.normal(size=(6, 4))
    X = rng.normal(size=(40, 4))
    M = lfr_assign(protos, X)
    assert np.abs(M.sum(axis=1) - 1.0).max() < 1e-12
    d2 = ((X[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(M.argmax(axis=1), d2.argmin(axis=1))


def test_assign_is_stable_for_distant_points():
    protos = np.array([[0.0], [1.0]])
    M = lfr_assign(protos, np.array([[1e4]]))
    assert np.isfinite(M).all()
    assert M[0, 1] == pytest.approx(1.0)


def test_assign_rejects_width_mismatch():
    with pytest.raises(MlpError, match="expected"):
        lfr_assign(np.zeros((2, 3)), np.zeros((4, 2)))


# -- loss --------------------------------------------------------------------

def test_loss_matches_naive_recount():
    rng = np.random.default_rng(2)
    params = make_params(rng)
    X = rng.normal(size=(12, 3))
    s = rng.integers(0, 2, 12)
    s[:2] = [0, 1]  # both groups present
    y = rng.integers(0, 2, 12)
    got = lfr_loss(params, X, s, y)
    want = naive_loss(params, X, s, y)
    for g, w in zip(got, want):
        assert g == pytest.approx(w, rel=1e-10)


def test_loss_requires_both_groups():
    rng = np.random.default_rng(3)
    params = make_params(rng)
    X = rng.normal(size=(5, 3))
    with pytest.raises(DegenerateGroupError):
        lfr_loss(params, X, np.zeros(5, dtype=int), np.ones(5))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    K, m, n = 3, 2, 10
    weights = (0.5, 2.0, 1.5)
    X = rng.normal(size=(n, m))
    s = np.array([0, 1] * 5)
    y = rng.integers(0, 2, n).astype(float)
    V = rng.normal(size=(K, m))
    u = rng.normal(0, 0.5, size=K)

    def loss_at(V_, u_):
        total, _, _, _ = _loss_and_grads(V_, u_, weights, X, s, y)
        return total

    _, _, gV, gu = _loss_and_grads(V, u, weights, X, s, y)
    eps = 1e-6
    for idx in np.ndindex(V.shape):
        Vp, Vm = V.copy(), V.copy()
        Vp[idx] += eps
        Vm[idx] -= eps
        num = (loss_at(Vp, u) - loss_at(Vm, u)) / (2 * eps)
        assert gV[idx] == pytest.approx(num, rel=1e-4, abs=1e-7)
    for k in range(K):
        up, um = u.copy(), u.copy()
        up[k] += eps
        um[k] -= eps
        num = (loss_at(V, up) - loss_at(V, um)) / (2 * eps)
        assert gu[k] == pytest.approx(num, rel=1e-4, abs=1e-7)


# -- fitting -----------------------------------------------------------------

def test_fit_without_fairness_term_fits_labels(small_splits):
    train, test = small_splits
    cfg = LfrConfig(K=8, reconstruct_weight=0.0, target_weight=10.0,
                    fairness_weight=0.0, iterations=800, learning_rate=0.05, seed=0)
    params, model = fit_lfr(train, cfg)
    preds = lfr_predict_split(params, test)
    assert (preds.labels == test.y).mean() >= 0.80
    assert model.role == "lfr"


def test_fit_lowers_group_gap_versus_start(small_splits):
    train, _ = small_splits
    cfg = LfrConfig(K=6, iterations=400, seed=1)
    params, _ = fit_lfr(train, cfg)
    start, _ = fit_lfr(train, cfg, iterations=0)
    _, _, _, lz_end = lfr_loss(params, train.X, train.s, train.y)
    _, _, _, lz_start = lfr_loss(start, train.X, train.s, train.y)
    assert lz_end < lz_start


def test_fit_improves_parity_on_biased_data(synth_splits):
    train, test = synth_splits
    cfg = LfrConfig(K=10, iterations=600, seed=0)
    params, _ = fit_lfr(train, cfg)
    preds = lfr_predict_split(params, test)
    assert p_rule(preds, test.s) > 0.7


def test_fit_is_deterministic(small_splits):
    train, _ = small_splits
    cfg = LfrConfig(K=5, iterations=60, seed=5)
    a, _ = fit_lfr(train, cfg)
    b, _ = fit_lfr(train, cfg)
    c, _ = fit_lfr(train, LfrConfig(K=5, iterations=60, seed=6))
    assert a.canonical_text() == b.canonical_text()
    assert a.canonical_text() != c.canonical_text()


# -- scoring and persistence -------------------------------------------------

def test_scores_are_probabilities_and_threshold_strict():
    rng = np.random.default_rng(6)
    params = make_params(rng, K=3)
    X = rng.normal(size=(30, 3))
    scores = lfr_score(params, X)
    assert np.all((scores > 0) & (scores < 1))
    flat = LfrParams(prototypes=np.zeros((2, 3)), prototype_labels=np.array([0.5, 0.5]),
                     loss_weights=(1, 1, 1), K=2, seed=0)
    preds = lfr_predict(flat, X, threshold=0.5)
    assert np.allclose(preds.scores, 0.5)
    assert not preds.labels.any()  # exactly at threshold stays negative


def test_params_validation():
    with pytest.raises(MlpError, match="labels"):
        LfrParams(prototypes=np.zeros((2, 2)), prototype_labels=np.array([0.5, 1.5]),
                  loss_weights=(1, 1, 1), K=2, seed=0)
    with pytest.raises(MlpError, match="mismatch"):
        LfrParams(prototypes=np.zeros((2, 2)), prototype_labels=np.array([0.5]),
                  loss_weights=(1, 1, 1), K=2, seed=0)
    with pytest.raises(MlpError, match="non-negative"):
        LfrParams(prototypes=np.zeros((2, 2)), prototype_labels=np.array([0.5, 0.5]),
                  loss_weights=(1, -1, 1), K=2, seed=0)


def test_save_load_round_trip(tmp_path, small_splits):
    train, test = small_splits
    cfg = LfrConfig(K=4, iterations=40, seed=2)
    params, _ = fit_lfr(train, cfg)
    path = tmp_path / "lfr.txt"
    save_lfr(params, path, cfg)
    again, cfg_again = load_lfr(path)
    assert again.canonical_text() == params.canonical_text()
    assert cfg_again == cfg
    assert np.array_equal(lfr_score(again, test.X), lfr_score(params, test.X))
