import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ambiweight.data import FindingSpec, ReportPolicy, SynthConfig, generate, split
from ambiweight.evaluation.metrics import (
    UndefinedAUCError,
    evaluate_heads,
    filter_unambiguous,
    roc_auc,
    roc_auc_bruteforce,
)
from ambiweight.evaluation.plots import write_family_charts
from ambiweight.evaluation.sweep import BASELINE, SweepConfig, mu_sweep, read_report_csv
from ambiweight.evaluation.training import TrainConfig, train
from ambiweight.labelcore import LabelMatrix
from ambiweight.models import SimpleCNNConfig, build_model
from ambiweight.weighting import head_class_weights

# --- AUC ------------------------------------------------------------------------


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]).auc == 0.5
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc == 0.75
    r = roc_auc([0.9, 0.1, 0.2], [0, 1, 1], head_id=3)
    assert (r.auc, r.n_pos, r.n_neg, r.head_id) == (0.0, 2, 1, 3)


def test_auc_undefined_and_bad_input():
    with pytest.raises(UndefinedAUCError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2, 0.3], [0, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_equals_pair_count(pairs):
    scores = np.array([p[0] for p in pairs], float) / 6
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        return
    assert roc_auc(scores, labels).auc == roc_auc_bruteforce(scores, labels).auc


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 20, 50).astype(float)
    y = np.r_[0, 1, rng.integers(0, 2, 48)]
    base = roc_auc(s, y).auc
    assert roc_auc(np.exp(s / 5) * 3 + 1, y).auc == base
    assert roc_auc(-s, y).auc == pytest.approx(1 - base, abs=1e-15)


# --- unambiguous filter -----------------------------------------------------------


def test_filter_unambiguous_examples():
    t = np.array([[1, 0, 0, 0], [0, 1, 0, 1], [0, 0, 1, 0], [1, 0, 0, 0]])
    m = LabelMatrix(t)
    keep, a, a_bar = filter_unambiguous(m, 0)
    assert keep.tolist() == [0, 1, 3] and a.tolist() == [1, 0, 1] and a_bar.tolist() == [0, 1, 0]
    keep, _, _ = filter_unambiguous(m, 1)
    assert keep.tolist() == [1, 2]


def test_filter_all_ambiguous_warns(caplog):
    m = LabelMatrix(np.zeros((5, 2), np.int8))
    with caplog.at_level(logging.WARNING):
        keep, a, _ = filter_unambiguous(m, 0)
    assert len(keep) == 0 and len(a) == 0
    assert "no unambiguous" in caplog.text
    assert evaluate_heads(np.full((5, 2), 0.5), m) == [None, None]


def test_filter_matches_brute_force_recount():
    rng = np.random.default_rng(0)
    state = rng.integers(0, 3, (500, 3))
    t = np.zeros((500, 6), np.int8)
    t[:, 0::2], t[:, 1::2] = state == 0, state == 1
    m = LabelMatrix(t)
    for k in range(3):
        keep, _, _ = filter_unambiguous(m, k)
        expect = [i for i in range(500) if (t[i, 2 * k], t[i, 2 * k + 1]) in ((1, 0), (0, 1))]
        assert keep.tolist() == expect


# --- training ---------------------------------------------------------------------


def _toy():
    cfg = SynthConfig(
        n_samples=300,
        image_size=16,
        findings=[FindingSpec(name="blobby", shape="blob", prevalence=0.5)],
        report_policy=[ReportPolicy(p_affirm_given_present=1, p_negate_given_absent=1)],
        seed=0,
    )
    return split(generate(cfg))


def _fit(hp, seed=0):
    tr, va, _ = _toy()
    model = build_model(SimpleCNNConfig(head_count=2), seed=seed)
    res = train(model, tr, va, head_class_weights(tr.labels), None, hp, seed=seed)
    return model, res


def test_zero_lr_leaves_parameters_unchanged():
    tr, va, _ = _toy()
    model = build_model(SimpleCNNConfig(head_count=2), seed=0)
    before = {k: v.copy() for k, v in model.state_dict().items() if "running" not in k}
    train(model, tr, va, None, None, TrainConfig(lr=0.0, epochs=1, augment=None), seed=0)
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_toy_training_loss_decreases_and_is_reproducible():
    hp = TrainConfig(lr=3e-3, epochs=20, augment=None)
    _, a = _fit(hp)
    losses = [e.train_loss for e in a.log]
    assert losses[-1] < losses[0]
    _, b = _fit(hp)
    assert [(e.train_loss, e.val_auc_mean) for e in a.log] == [(e.train_loss, e.val_auc_mean) for e in b.log]


def test_head_count_mismatch_is_rejected():
    tr, va, _ = _toy()
    with pytest.raises(ValueError, match="heads"):
        train(build_model(SimpleCNNConfig(head_count=4)), tr, va, None, None, TrainConfig(epochs=1), seed=0)


# --- sweep ------------------------------------------------------------------------


def _small_sweep_cfg(**kw):
    synth = SynthConfig(
        n_samples=120,
        image_size=16,
        findings=[FindingSpec(name="blobby", shape="blob", prevalence=0.5), FindingSpec(name="ringy", shape="ring", prevalence=0.4)],
        report_policy=[ReportPolicy(p_affirm_given_present=0.8, p_negate_given_absent=0.6)] * 2,
        seed=1,
    )
    base = dict(synth=synth, model=SimpleCNNConfig(head_count=4, conv_stack=[(4, 1), (8, 2)]), train=TrainConfig(lr=3e-3, epochs=1))
    base.update(kw)
    return SweepConfig(**base)


def test_sweep_row_count_and_csv(tmp_path):
    rep = mu_sweep([0.2, 0.8], [0, 1], _small_sweep_cfg(include_unweighted=True))
    # (grid + baseline + unweighted) arms per seed, one row per head
    assert len(rep.rows()) == (2 + 2) * 2 * 4
    assert not rep.failures
    path = tmp_path / "sweep.csv"
    rep.write_csv(path)
    assert read_report_csv(path) == [(a, s, h, v) for a, s, h, v in rep.rows()]
    assert rep.optimal_mu() in (0.2, 0.8)
    charts = write_family_charts(rep.rows(), rep.head_names, tmp_path)
    assert [p.name for p in charts] == ["auc_positive.svg", "auc_negated.svg"]
    for p in charts:
        text = p.read_text()
        assert text.startswith("<svg") and "baseline" in text


def test_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        mu_sweep([1.2], [0], _small_sweep_cfg())
    with pytest.raises(ValueError):
        mu_sweep([], [0], _small_sweep_cfg())


def test_symmetric_pair_gets_symmetric_treatment():
    # one finding, prevalence 0.5, equal mention rates: a = 1 and a_bar = 1 are mirror images.
    # Paired per-seed difference between the two heads' AUCs must not differ from zero.
    synth = SynthConfig(
        n_samples=600,
        image_size=16,
        findings=[FindingSpec(name="blobby", shape="blob", prevalence=0.5)],
        report_policy=[ReportPolicy(p_affirm_given_present=0.7, p_negate_given_absent=0.7)],
        amplitude=(0.03, 0.25),
        background_noise=0.15,
        seed=0,
    )
    cfg = SweepConfig(
        synth=synth,
        model=SimpleCNNConfig(head_count=2, conv_stack=[(8, 1), (16, 2), (16, 2)]),
        train=TrainConfig(lr=3e-3, epochs=40),
        sigma=0.0,
    )
    rep = mu_sweep([0.5], [0, 1, 2, 3, 4], cfg)
    diffs = [r.aucs[0] - r.aucs[1] for r in rep.results if r.arm.label != BASELINE]
    assert len(diffs) == 5
    assert stats.ttest_1samp(diffs, 0.0).pvalue > 0.05
    assert abs(np.mean(diffs)) < 0.02
