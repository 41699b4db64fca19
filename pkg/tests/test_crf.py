import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recl.cohort import CohortError
from recl.crf import (
    StepFunction,
    first_event_pseudo_observations,
    group_crf,
    naive_pseudo_observations,
    nelson_aalen,
    pseudo_observations,
    pseudo_observations_grid,
)

from conftest import cohorts, make_cohort


def test_no_events_gives_zero_function():
    na = nelson_aalen(make_cohort([2.0, 3.0], [[], []]))
    assert na(1.0) == 0.0 and na(10.0) == 0.0


def test_hand_values(three_uncensored, three_censored):
    assert nelson_aalen(three_uncensored)(2.0) == pytest.approx(2 / 3 + 1 / 3, abs=1e-15)
    assert nelson_aalen(three_censored)(2.0) == pytest.approx(2 / 3 + 1 / 2, abs=1e-15)
    na = nelson_aalen(three_censored)
    assert na(0.999) == 0.0
    assert na(1.0) == pytest.approx(2 / 3)  # right-continuous
    np.testing.assert_allclose(na.knots, [1.0, 2.0])


def test_censored_pos_hand_values(three_censored):
    # subject 1: 3*(7/6) - 2*(1/2 + 1/2); subject 2: 3*(7/6) - 2*(1/2);
    # subject 3: 3*(7/6) - 2*(2/2 + 1/1)
    np.testing.assert_allclose(pseudo_observations(three_censored, 2.0), [1.5, 2.5, -0.5], atol=1e-12)
    np.testing.assert_allclose(naive_pseudo_observations(three_censored, 2.0), [1.5, 2.5, -0.5], atol=1e-12)


def test_uncensored_pos_equal_counts(three_uncensored):
    np.testing.assert_array_equal(pseudo_observations(three_uncensored, 2.0), [1.0, 2.0, 0.0])
    np.testing.assert_array_equal(pseudo_observations(three_uncensored, 1.5), [1.0, 1.0, 0.0])


def test_group_crf(three_censored):
    ids = three_censored.ids
    full = group_crf(three_censored, ids)
    assert full == nelson_aalen(three_censored)
    single = group_crf(make_cohort([4.0, 4.0], [[1.0], []]), ["1"])
    np.testing.assert_array_equal(single.knots, [1.0])
    np.testing.assert_array_equal(single.values, [1.0])
    # {1, 2}: C=(1.5, 4); s=1: 2/2, s=2: 1/1
    assert group_crf(three_censored, ids[:2])(2.0) == pytest.approx(2.0)
    with pytest.raises(CohortError):
        group_crf(three_censored, [])


def test_lone_subject_at_risk_matches_naive():
    # at s=2 and s=3 only subject 2 is at risk and owns the events there, so its
    # leave-one-out jump is empty; a foreign event at such s cannot occur because
    # every event's owner is at risk at that time
    cohort = make_cohort([1.0, 3.0], [[], [2.0, 3.0]])
    np.testing.assert_allclose(
        pseudo_observations(cohort, 3.0), naive_pseudo_observations(cohort, 3.0), atol=1e-12
    )


def test_pos_need_two_subjects_and_positive_t(three_censored):
    with pytest.raises(CohortError):
        pseudo_observations(make_cohort([1.0], [[]], k=1), 1.0)
    with pytest.raises(ValueError):
        pseudo_observations(three_censored, 0.0)


def test_grid_matches_single(three_censored):
    grid = [0.5, 1.0, 1.7, 2.0, 3.9]
    P = pseudo_observations_grid(three_censored, grid)
    for j, t in enumerate(grid):
        np.testing.assert_array_equal(P[:, j], pseudo_observations(three_censored, t))


def test_step_function_csv_roundtrip():
    f = StepFunction(np.array([0.5, 1.25]), np.array([0.1, 0.7]))
    g = StepFunction.from_csv(f.to_csv(label="curve"))
    assert g == f
    assert f(0.4) == 0.0 and f(0.5) == 0.1 and f(100.0) == 0.7
    np.testing.assert_allclose(f.jumps, [0.1, 0.6])


def test_step_function_rejects_decreasing():
    with pytest.raises(ValueError):
        StepFunction(np.array([1.0, 2.0]), np.array([0.5, 0.2]))


@settings(max_examples=150, deadline=None)
@given(cohorts(max_n=50), st.floats(0.1, 4.0))
def test_efficient_equals_naive(cohort, t):
    np.testing.assert_allclose(
        pseudo_observations(cohort, t), naive_pseudo_observations(cohort, t), rtol=0, atol=1e-10
    )


@settings(max_examples=100, deadline=None)
@given(cohorts(max_n=40, censor=False), st.floats(0.1, 4.0))
def test_no_censoring_exact_counts(cohort, t):
    np.testing.assert_array_equal(pseudo_observations(cohort, t), cohort.counts_at(t).astype(float))


@settings(max_examples=100, deadline=None)
@given(cohorts(max_n=40))
def test_nelson_aalen_monotone_jumps_at_events(cohort):
    na = nelson_aalen(cohort)
    assert np.all(np.diff(na.values) >= 0)
    np.testing.assert_array_equal(na.knots, np.unique(cohort.event_times))


def test_first_event_pos_uncensored_are_indicators():
    cohort = make_cohort([4.0] * 4, [[1.0, 2.0], [3.0], [], [0.5]])
    np.testing.assert_allclose(first_event_pseudo_observations(cohort, 2.0), [1, 0, 0, 1], atol=1e-12)


def test_poisson_po_mean_converges_to_rate_times_t():
    """Homogeneous Poisson process with independent censoring: the mean of the
    pseudo-observations estimates lambda * t."""
    lam, t, reps, n = 0.8, 2.5, 40, 300
    rng = np.random.default_rng(20240611)
    means = []
    for _ in range(reps):
        C = rng.uniform(1.0, 4.0, n)
        events = [np.sort(rng.uniform(0, c, rng.poisson(lam * c))) for c in C]
        cohort = make_cohort(C, events, tau=4.0)
        means.append(pseudo_observations(cohort, t).mean())
    means = np.array(means)
    se = means.std(ddof=1) / math.sqrt(reps)
    assert abs(means.mean() - lam * t) < 3 * se
