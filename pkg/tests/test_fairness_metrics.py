"""Group metrics: hand-counted cases, loop-based tally oracle, edge conventions."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from fairdelta.fairness_metrics import (
    DegenerateGroupError,
    accuracy,
    compute_fairness_scores,
    demographic_parity_rates,
    disparate_mistreatment,
    p_rule,
    tpr_fpr_by_group,
)
from fairdelta.mlp_core import PredictionSet


def tally_rates(labels, s):
    """Plain-python recount of the per-group positive rates."""
    pos = {0: 0, 1: 0}
    tot = {0: 0, 1: 0}
    for lab, sv in zip(labels, s):
        tot[sv] += 1
        pos[sv] += int(lab == 1)
    return pos[0] / tot[0], pos[1] / tot[1]


def tally_tpr_fpr(labels, y, s):
    hit = {(g, yv): 0 for g in (0, 1) for yv in (0, 1)}
    tot = {(g, yv): 0 for g in (0, 1) for yv in (0, 1)}
    for lab, yv, sv in zip(labels, y, s):
        tot[(sv, yv)] += 1
        hit[(sv, yv)] += int(lab == 1)
    tpr = (hit[(0, 1)] / tot[(0, 1)], hit[(1, 1)] / tot[(1, 1)])
    fpr = (hit[(0, 0)] / tot[(0, 0)], hit[(1, 0)] / tot[(1, 0)])
    return tpr, fpr


def test_hand_counted_example():
    #         s=0 ---------------    s=1 ---------------
    labels = [1, 0, 0, 1, 0, 0, 0,   1, 1, 1, 0, 1]
    s      = [0, 0, 0, 0, 0, 0, 0,   1, 1, 1, 1, 1]
    r0, r1 = demographic_parity_rates(labels, s)
    assert r0 == pytest.approx(2 / 7)
    assert r1 == pytest.approx(4 / 5)
    assert p_rule(labels, s) == pytest.approx((2 / 7) / (4 / 5))


def test_hand_counted_mistreatment():
    labels = [1, 0, 1, 0, 1, 1, 0, 0]
    y      = [1, 1, 0, 0, 1, 0, 1, 0]
    s      = [0, 0, 0, 0, 1, 1, 1, 1]
    (tpr0, tpr1), (fpr0, fpr1) = tpr_fpr_by_group(labels, y, s)
    assert (tpr0, tpr1) == (0.5, 0.5)
    assert (fpr0, fpr1) == (0.5, 0.5)
    d_tpr, d_fpr = disparate_mistreatment(labels, y, s)
    assert d_tpr == 0.0 and d_fpr == 0.0


def test_rates_match_loop_tally_on_random_draws():
    rng = np.random.default_rng(10)
    for _ in range(25):
        n = int(rng.integers(40, 200))
        labels = rng.integers(0, 2, n)
        y = rng.integers(0, 2, n)
        s = rng.integers(0, 2, n)
        if len({(sv, yv) for sv, yv in zip(s, y)}) < 4:
            continue
        assert demographic_parity_rates(labels, s) == pytest.approx(tally_rates(labels, s))
        tpr, fpr = tally_tpr_fpr(labels, y, s)
        got_tpr, got_fpr = tpr_fpr_by_group(labels, y, s)
        assert got_tpr == pytest.approx(tpr)
        assert got_fpr == pytest.approx(fpr)
        scores = compute_fairness_scores(labels, y, s)
        assert scores.accuracy == pytest.approx(sum(int(a == b) for a, b in zip(labels, y)) / n)
        assert scores.d_tpr == pytest.approx(tpr[1] - tpr[0])
        assert scores.d_fpr == pytest.approx(fpr[1] - fpr[0])


def test_p_rule_is_symmetric_in_group_labels():
    rng = np.random.default_rng(11)
    labels = rng.integers(0, 2, 300)
    s = rng.integers(0, 2, 300)
    assert p_rule(labels, s) == pytest.approx(p_rule(labels, 1 - s))


def test_p_rule_is_at_most_one():
    rng = np.random.default_rng(12)
    for _ in range(20):
        labels = rng.integers(0, 2, 50)
        s = rng.integers(0, 2, 50)
        assert 0.0 <= p_rule(labels, s) <= 1.0


def test_p_rule_zero_conventions(caplog):
    s = [0, 0, 1, 1]
    with caplog.at_level(logging.INFO):
        assert p_rule([0, 0, 0, 0], s) == 1.0
    assert "both positive rates are zero" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.INFO):
        assert p_rule([0, 0, 1, 0], s) == 0.0
    assert "exactly one" in caplog.text


def test_empty_group_raises():
    with pytest.raises(DegenerateGroupError, match="s=1"):
        demographic_parity_rates([1, 0], [0, 0])


def test_empty_cell_raises_with_cell_name():
    labels = [1, 0, 1, 0]
    s = [0, 0, 1, 1]
    y = [1, 1, 1, 1]  # nobody with y=0
    with pytest.raises(DegenerateGroupError, match=r"\(s=0, y=0\)"):
        tpr_fpr_by_group(labels, y, s)


def test_accuracy_trivial_and_errors():
    assert accuracy([1, 1, 0], [1, 0, 0]) == pytest.approx(2 / 3)
    with pytest.raises(DegenerateGroupError, match="length"):
        accuracy([1, 0], [1])
    with pytest.raises(DegenerateGroupError, match="empty"):
        accuracy([], [])


def test_metrics_accept_prediction_sets():
    labels = np.array([1, 0, 1, 0])
    preds = PredictionSet(ids=np.arange(4), scores=np.array([0.9, 0.1, 0.8, 0.2]),
                          labels=labels)
    s = np.array([0, 0, 1, 1])
    assert demographic_parity_rates(preds, s) == demographic_parity_rates(labels, s)


def test_metrics_use_labels_not_scores():
    # scores say one thing, labels another; labels must win
    preds = PredictionSet(ids=np.arange(4), scores=np.array([0.99, 0.99, 0.01, 0.01]),
                          labels=np.array([0, 0, 1, 1]))
    s = np.array([0, 0, 1, 1])
    r0, r1 = demographic_parity_rates(preds, s)
    assert (r0, r1) == (0.0, 1.0)
