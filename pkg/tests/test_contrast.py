import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recl.cohort import Cohort
from recl.contrast import (
    ContrastError,
    arm_signal_aipw,
    arm_signal_ipw,
    arm_signal_or,
    binary_contrast,
    cost_matrix,
    from_signals,
)
from recl.crf import StepFunction, pseudo_observations
from recl.smr import SmrFit, fit_smr, predict_mean

from conftest import make_cohort


def five_subjects():
    X = np.array([[-1.0], [0.2], [0.5], [1.5], [-0.3]])
    A = np.array([0, 1, 1, 0, 1])
    C = np.array([4.0, 2.5, 4.0, 3.0, 4.0])
    events = [[0.5, 1.5], [1.0], [], [0.2, 0.9, 2.8], [3.0]]
    return Cohort.from_arrays(X, A, C, events, k=2, tau=4.0)


def test_ipw_signal_examples():
    assert arm_signal_ipw(2.0, 1, 0.5, 1) == 4.0
    assert arm_signal_ipw(2.0, 1, 0.5, 0) == 0.0
    assert arm_signal_ipw(-0.5, 1, 0.25, 1) == -2.0


def test_aipw_signal_examples():
    assert arm_signal_aipw(2.0, 1, 0.5, 0.7, 0) == 0.7
    assert arm_signal_aipw(2.0, 1, 1.0, 0.7, 1) == 2.0
    assert arm_signal_aipw(2.0, 1, 0.5, 1.0, 1) == 3.0


def test_or_signal_zero_theta():
    fit = SmrFit(np.zeros(3), StepFunction(np.array([1.0]), np.array([0.4])), 1, 2, ("x", "a", "a:x"), 0, 0.0)
    assert arm_signal_or(fit, [2.0], 0, 1.0) == arm_signal_or(fit, [2.0], 1, 1.0) == 0.4


def test_binary_two_arm_reconciliation():
    cm = from_signals([[1.0, 0.4]])
    np.testing.assert_allclose(cm.costs, [[0.6, 0.0]])
    assert cm.best_label[0] == 1
    C = 0.4 - 1.0
    assert int(C < 0) == cm.best_label[0]


def test_sparse_ipw_row_tie_break():
    cm = from_signals([[0.0, 3.0 / 0.5, 0.0]])
    np.testing.assert_array_equal(cm.costs, [[0.0, 6.0, 0.0]])
    assert cm.best_label[0] == 0


def test_aipw_matrix_against_scalar_calculator():
    cohort = five_subjects()
    t = 2.0
    fit = fit_smr(cohort)
    P = np.array([[0.7, 0.3], [0.4, 0.6], [0.5, 0.5], [0.8, 0.2], [0.25, 0.75]])
    pos = pseudo_observations(cohort, t)
    cm = cost_matrix(cohort, "AIPW", t, fit=fit, ps=P, pos=pos)
    for i in range(cohort.n):
        sig = [
            arm_signal_aipw(pos[i], cohort.A[i], P[i, a], predict_mean(fit, cohort.X[i], a, t), a)
            for a in range(2)
        ]
        lo = min(sig)
        np.testing.assert_allclose(cm.costs[i], [s - lo for s in sig], rtol=0, atol=1e-12)
        assert cm.best_label[i] == sig.index(lo)
    ipw = cost_matrix(cohort, "IPW", t, ps=P)
    for i in range(cohort.n):
        sig = [arm_signal_ipw(pos[i], cohort.A[i], P[i, a], a) for a in range(2)]
        np.testing.assert_allclose(ipw.raw_signals[i], sig, rtol=0, atol=1e-12)


def test_missing_inputs():
    cohort = five_subjects()
    with pytest.raises(ContrastError, match="outcome model"):
        cost_matrix(cohort, "OR", 1.0)
    with pytest.raises(ContrastError, match="propensity required"):
        cost_matrix(cohort, "IPW", 1.0)
    with pytest.raises(ContrastError, match="unknown method"):
        cost_matrix(cohort, "XYZ", 1.0)
    with pytest.raises(ContrastError, match="shape"):
        cost_matrix(cohort, "IPW", 1.0, ps=np.full((5, 3), 1 / 3))


def test_binary_contrast_boundary_and_k_check():
    cohort = five_subjects()
    P = np.full((5, 2), 0.5)
    C, W = binary_contrast(cohort, "IPW", 2.0, ps=P)
    np.testing.assert_array_equal(W, (C < 0).astype(int))
    cm = cost_matrix(cohort, "IPW", 2.0, ps=P)
    np.testing.assert_array_equal(np.abs(C), cm.costs.max(axis=1))
    np.testing.assert_array_equal(W, cm.best_label)
    # ties: C = 0 gives W = 0
    zero = make_cohort([4.0, 4.0], [[], []], A=[0, 1])
    C0, W0 = binary_contrast(zero, "IPW", 1.0, ps=np.full((2, 2), 0.5))
    np.testing.assert_array_equal(C0, [0.0, 0.0])
    np.testing.assert_array_equal(W0, [0, 0])
    three = make_cohort([4.0] * 3, [[], [], []], A=[0, 1, 2], k=3)
    with pytest.raises(ContrastError, match="K=2"):
        binary_contrast(three, "IPW", 1.0, ps=np.full((3, 3), 1 / 3))


def test_csv_export():
    cm = from_signals([[1.0, 0.4], [0.0, 2.0]], horizon=2.0, method="IPW", ids=("a", "b"))
    text = cm.to_csv(["ctrl", "trt"])
    assert "id,cost_0,cost_1,best_label" in text
    assert "0=ctrl" in text


# quarter-grid values keep the shifted rows exact in floating point
quarters = st.integers(-200, 200).map(lambda v: v / 4)
signals = arrays(float, st.tuples(st.integers(1, 8), st.integers(2, 4)), elements=quarters)


@settings(max_examples=100, deadline=None)
@given(signals, quarters)
def test_row_min_zero_and_shift_invariance(S, shift):
    cm = from_signals(S)
    assert np.all(cm.costs.min(axis=1) == 0.0)
    assert np.all(cm.costs >= 0)
    np.testing.assert_array_equal(cm.costs[np.arange(len(S)), cm.best_label], 0.0)
    # the first minimiser is the label
    for i, row in enumerate(S):
        assert cm.best_label[i] == int(np.flatnonzero(row == row.min())[0])
    shifted = from_signals(S + shift * np.arange(1, len(S) + 1)[:, None])
    np.testing.assert_array_equal(shifted.best_label, cm.best_label)
    np.testing.assert_array_equal(shifted.costs, cm.costs)


def test_ipw_marginal_unbiasedness_with_known_ps():
    """mean_i I(A_i=a) PO_i / pi(a, X_i) estimates E[N^a(t)] (light-tailed design)."""
    t, n, reps = 2.0, 2000, 30
    rng = np.random.default_rng(99)
    truth = {a: math.exp(0.2 * a + 0.5 * 0.3**2) * 0.5 * t for a in (0, 1)}
    est = []
    for _ in range(reps):
        X = rng.standard_normal((n, 1))
        p1 = 1 / (1 + np.exp(-0.5 * X[:, 0]))
        A = (rng.random(n) < p1).astype(int)
        C = rng.uniform(1.0, 4.0, n)
        rate = np.exp(0.3 * X[:, 0] + 0.2 * A) * 0.5
        events = [np.sort(rng.uniform(0, C[i], rng.poisson(rate[i] * C[i]))) for i in range(n)]
        cohort = Cohort.from_arrays(X, A, C, events, k=2, tau=4.0)
        P = np.column_stack([1 - p1, p1])
        est.append(cost_matrix(cohort, "IPW", t, ps=P).raw_signals.mean(axis=0))
    est = np.array(est)
    se = est.std(axis=0, ddof=1) / math.sqrt(reps)
    for a in (0, 1):
        assert abs(est[:, a].mean() - truth[a]) < 3 * se[a]
