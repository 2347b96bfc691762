import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambiweight.labelcore import LabelMatrix, PairState
from ambiweight.loss import (
    EPS,
    multilabel_loss,
    multilabel_loss_from_logits,
    wbce,
    wbce_grad_logit,
)
from ambiweight.tensor import Tensor
from ambiweight.weighting import (
    ClassWeights,
    EmptyClassError,
    InvalidSampleError,
    ModifierConfig,
    ModifierDraw,
    batch_weights,
    class_weights,
    draw_modifier,
    effective_weights,
    head_class_weights,
)


# --- class weights --------------------------------------------------------------


def test_class_weights_examples():
    cw = class_weights(12088, 57920)
    assert cw.w1 == pytest.approx(57920 / 70008)
    assert round(cw.w1, 4) == 0.8273 and round(cw.w0, 4) == 0.1727
    half = class_weights(5, 5)
    assert half.w1 == half.w0 == 0.5
    edge = class_weights(0, 10)
    assert edge.w1 == 1.0 and edge.w0 == 0.0


def test_class_weights_empty():
    with pytest.raises(EmptyClassError):
        class_weights(0, 0)


def test_head_class_weights_counts_columns():
    m = LabelMatrix(np.array([[1, 0], [0, 1], [0, 0], [0, 0]], np.int8), list("abcd"))
    pos, neg = head_class_weights(m)
    assert (pos.f1, pos.f0, pos.w1) == (1, 3, 0.75)
    assert (neg.f1, neg.f0, neg.w1) == (1, 3, 0.75)


# --- modifiers ------------------------------------------------------------------


def test_draw_sigma_zero_is_exact():
    d = draw_modifier(ModifierConfig(mu=0.8, sigma=0.0), np.random.default_rng(0))
    assert d.m == 0.8 and d.m_bar == 1 - 0.8


def test_draw_mean_and_clamp():
    rng = np.random.default_rng(1)
    draws = [draw_modifier(ModifierConfig(mu=0.8, sigma=0.05), rng).m for _ in range(100_000)]
    assert abs(np.mean(draws) - 0.8) < 0.002
    rng = np.random.default_rng(2)
    top = [draw_modifier(ModifierConfig(mu=1.0, sigma=0.05), rng) for _ in range(100_000)]
    assert all(0.0 <= d.m <= 1.0 and d.m + d.m_bar == 1.0 for d in top)


def test_modifier_config_validates():
    with pytest.raises(ValueError):
        ModifierConfig(mu=1.5)
    with pytest.raises(ValueError):
        ModifierConfig(mu=0.5, sigma=-1)


def test_effective_weights_examples():
    pos = ClassWeights(0.8, 0.2, 1, 4)
    neg = ClassWeights(0.6, 0.4, 2, 3)
    (pw1, pw0), (nw1, nw0) = effective_weights(PairState.AMBIGUOUS, pos, neg, ModifierDraw(0.8, 0.2))
    assert (pw1, nw1) == (0.8, 0.6)
    assert pw0 == pytest.approx(0.16) and nw0 == pytest.approx(0.08)
    assert effective_weights(PairState.POSITIVE_EXISTS, pos, neg, ModifierDraw(0.8, 0.2)) == ((0.8, 0.2), (0.6, 0.4))
    assert effective_weights(PairState.NEGATION_EXISTS, pos, neg, ModifierDraw(0.8, 0.2)) == ((0.8, 0.2), (0.6, 0.4))
    (_, a), (_, b) = effective_weights(PairState.AMBIGUOUS, pos, neg, ModifierDraw(0.5, 0.5))
    assert a == pos.w0 / 2 and b == neg.w0 / 2


def test_effective_weights_rejects_contradiction():
    cw = ClassWeights(0.5, 0.5, 1, 1)
    with pytest.raises(InvalidSampleError):
        effective_weights(PairState.CONTRADICTION, cw, cw, ModifierDraw(0.5, 0.5))


def _targets(rng, n, k):
    state = rng.integers(0, 3, size=(n, k))
    t = np.zeros((n, 2 * k), np.int8)
    t[:, 0::2] = state == 0
    t[:, 1::2] = state == 1
    return t


def test_batch_weights_identity_off_ambiguous_and_replayable():
    rng = np.random.default_rng(3)
    t = _targets(rng, 30, 3)
    heads = [class_weights(int(c), 30 - int(c)) for c in t.sum(0)]
    ids = [f"s{i}" for i in range(30)]
    cfg = ModifierConfig(mu=0.7, sigma=0.05, seed=4)
    w1, w0 = batch_weights(t, ids, heads, cfg, step=5)
    b1, b0 = batch_weights(t, ids, heads, None, step=5)
    amb = np.repeat((t[:, 0::2] == 0) & (t[:, 1::2] == 0), 2, axis=1)
    assert np.array_equal(w1, b1)
    assert np.array_equal(w0[~amb], b0[~amb])
    # m + m_bar = 1 on every ambiguous pair
    m = w0[:, 0::2] / b0[:, 0::2]
    mbar = w0[:, 1::2] / b0[:, 1::2]
    a = amb[:, 0::2]
    assert np.allclose((m + mbar)[a], 1.0)
    # draws depend on (seed, sample, step) only: a sub-batch sees the same values
    s1, s0 = batch_weights(t[10:20], ids[10:20], heads, cfg, step=5)
    assert np.array_equal(s0, w0[10:20])
    assert not np.array_equal(batch_weights(t, ids, heads, cfg, step=6)[1], w0)


def test_batch_weights_unweighted_and_contradiction():
    t = np.array([[0, 0], [1, 0]], np.int8)
    w1, w0 = batch_weights(t, ["a", "b"], None, None, 0)
    assert np.all(w1 == 1) and np.all(w0 == 1)
    with pytest.raises(InvalidSampleError):
        batch_weights(np.array([[1, 1]], np.int8), ["a"], None, None, 0)


def test_mu_one_sigma_zero_matches_baseline_on_positive_and_zeroes_negated():
    rng = np.random.default_rng(5)
    t = _targets(rng, 40, 2)
    heads = [class_weights(int(c), 40 - int(c)) for c in t.sum(0)]
    ids = [f"s{i}" for i in range(40)]
    p = rng.uniform(0.05, 0.95, t.shape)
    w1, w0 = batch_weights(t, ids, heads, ModifierConfig(mu=1.0, sigma=0.0), 0)
    b1, b0 = batch_weights(t, ids, heads, None, 0)
    amb = (t[:, 0::2] == 0) & (t[:, 1::2] == 0)
    for k in range(2):
        rows = amb[:, k]
        pos, neg = 2 * k, 2 * k + 1
        mod = [wbce(int(t[i, pos]), p[i, pos], w1[i, pos], w0[i, pos]) for i in np.flatnonzero(rows)]
        base = [wbce(int(t[i, pos]), p[i, pos], b1[i, pos], b0[i, pos]) for i in np.flatnonzero(rows)]
        assert mod == base
        zeroed = [wbce(int(t[i, neg]), p[i, neg], w1[i, neg], w0[i, neg]) for i in np.flatnonzero(rows)]
        assert all(v == 0.0 for v in zeroed)


# --- loss -------------------------------------------------------------------------


def test_wbce_examples():
    assert wbce(1, 0.5, 0.5, 0.5) == pytest.approx(0.5 * math.log(2), rel=1e-12)
    assert wbce(1, 1.0, 1, 1) == pytest.approx(-math.log(1 - EPS))
    assert wbce(0, 0.9, 1, 1) == pytest.approx(-math.log(0.1), rel=1e-12)


def test_wbce_grad_examples():
    assert wbce_grad_logit(1, 0.0, 1, 1) == -0.5
    assert wbce_grad_logit(0, 0.0, 1, 1) == 0.5
    assert abs(wbce_grad_logit(1, 50.0, 1, 1)) < 1e-20


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(0, 1),
    st.floats(-8, 8),
    st.floats(0.01, 2),
    st.floats(0.01, 2),
)
def test_wbce_grad_matches_finite_difference(y, z, w1, w0):
    h = 1e-5
    num = (wbce(y, _sigmoid(z + h), w1, w0) - wbce(y, _sigmoid(z - h), w1, w0)) / (2 * h)
    ana = wbce_grad_logit(y, z, w1, w0)
    assert abs(ana - num) <= 1e-6 * max(abs(ana), abs(num), 1e-3)


def test_wbce_reduces_to_bce_and_is_linear_in_weights():
    for y, p in [(0, 0.3), (1, 0.3), (1, 0.99)]:
        bce = -(y * math.log(p) + (1 - y) * math.log(1 - p))
        assert wbce(y, p, 1, 1) == pytest.approx(bce, rel=1e-14)
        assert wbce(y, p, 3 * 0.4, 3 * 0.7) == pytest.approx(3 * wbce(y, p, 0.4, 0.7), rel=1e-14)
        z = math.log(p / (1 - p))
        assert wbce_grad_logit(y, z, 3 * 0.4, 3 * 0.7) == pytest.approx(3 * wbce_grad_logit(y, z, 0.4, 0.7), rel=1e-14)


def test_multilabel_loss_examples():
    y = np.array([[1]])
    p = np.array([[0.7]])
    assert multilabel_loss(y, p, np.ones((1, 1)), np.ones((1, 1))) == pytest.approx(wbce(1, 0.7, 1, 1), rel=1e-15)
    # two heads whose per-head losses are 0.2 and 0.4
    p2 = np.array([[math.exp(-0.2), math.exp(-0.4)]])
    assert multilabel_loss(np.array([[1, 1]]), p2, np.ones((1, 2)), np.ones((1, 2))) == pytest.approx(0.3)
    sat = multilabel_loss(np.array([[1, 0]]), np.array([[1.0, 0.0]]), np.ones((1, 2)), np.ones((1, 2)))
    assert 0 < sat <= -math.log(1 - EPS) + 1e-15


def test_multilabel_loss_averaging_order():
    # means over samples first, then over heads: with equal sample counts the order is moot,
    # so check against the explicit formula on a ragged-looking case
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, (5, 3))
    p = rng.uniform(0.1, 0.9, (5, 3))
    w1, w0 = rng.uniform(0.1, 1, (5, 3)), rng.uniform(0.1, 1, (5, 3))
    per_head = [np.mean([wbce(y[i, h], p[i, h], w1[i, h], w0[i, h]) for i in range(5)]) for h in range(3)]
    assert multilabel_loss(y, p, w1, w0) == pytest.approx(np.mean(per_head), rel=1e-13)


def test_multilabel_loss_errors():
    with pytest.raises(ValueError):
        multilabel_loss(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        multilabel_loss(np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)))


def test_loss_from_logits_matches_numpy_loss_and_gradient():
    rng = np.random.default_rng(1)
    z = rng.normal(0, 2, (6, 4))
    y = rng.integers(0, 2, (6, 4))
    w1, w0 = rng.uniform(0.1, 1, (6, 4)), rng.uniform(0.1, 1, (6, 4))
    t = Tensor(z, requires_grad=True)
    loss = multilabel_loss_from_logits(t, y, w1, w0)
    p = 1 / (1 + np.exp(-z))
    assert loss.item() == pytest.approx(multilabel_loss(y, p, w1, w0), rel=1e-13)
    loss.backward()
    expect = np.array([[wbce_grad_logit(y[i, j], z[i, j], w1[i, j], w0[i, j]) for j in range(4)] for i in range(6)]) / 24
    assert np.allclose(t.grad, expect, rtol=1e-12, atol=0)
