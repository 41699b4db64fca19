import math

import numpy as np
import pytest

from recl.sim import (
    METHODS,
    ExperimentReport,
    ScenarioSpec,
    evaluate_regime,
    gen_scenario,
    optimal_regime,
    propensity_truth,
    run_experiment,
    run_replicate,
    sample_covariates,
    simulate_cohort,
    true_mean_count,
)


def gauss_hermite_shares(n_nodes=120):
    """E[pi_j(X) / sum pi(X)] for Scenario 2 by tensor Gauss-Hermite quadrature."""
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    x1, x2 = np.meshgrid(z, z, indexing="ij")
    pi = np.stack([np.ones_like(x1), np.exp(x1 - x2), np.exp(0.5 * x1 - x2)])
    pi /= pi.sum(axis=0)
    return (pi * np.outer(w, w)).sum(axis=(1, 2))


def test_optimal_regime_examples():
    assert optimal_regime(1, [-2.0, 0.0, 0.0]) == 0
    assert optimal_regime(1, [0.0, 0.0, 0.0]) == 1
    assert optimal_regime(2, [0.0, 0.0, 0.0]) == 1
    assert optimal_regime(2, [0.0, 1.0, 0.0]) == 2
    assert optimal_regime(2, [-1.0, 1.0, 0.0]) == 0
    X = sample_covariates(1000, np.random.default_rng(0))
    assert set(np.unique(optimal_regime(2, X))) == {0, 1, 2}


def test_propensity_truth_at_origin():
    assert propensity_truth(1, [[0.0, 0.0, 0.0]])[0, 1] == 0.5
    np.testing.assert_allclose(propensity_truth(2, [[0.0, 0.0, 0.0]]), [[1 / 3, 1 / 3, 1 / 3]])


def test_true_mean_count_examples():
    assert true_mean_count(1, [0.0, 0.0, 0.0], 1, 2.0) == pytest.approx(math.exp(-0.8), rel=1e-12)
    assert true_mean_count(1, [0.0, 0.0, 0.0], 1, 2.0) == pytest.approx(0.4493, abs=1e-4)
    assert true_mean_count(2, [0.0, 0.0, 0.0], 1, 2.0) == pytest.approx(0.7408, abs=1e-4)
    # off-regime action pays the |1.5 x1 - 0.5| penalty
    assert true_mean_count(1, [0.0, 0.0, 0.0], 0, 2.0) == pytest.approx(math.exp(0.5 - 0.8), rel=1e-12)
    assert true_mean_count(2, [0.0, 0.0, 0.0], 0, 2.0) == pytest.approx(math.exp(0.15 - 0.3), rel=1e-12)
    X = sample_covariates(50, np.random.default_rng(1))
    A = np.random.default_rng(2).integers(0, 2, 50)
    for t in (0.5, 1.0, 3.0):
        np.testing.assert_allclose(true_mean_count(1, X, A, t), t * true_mean_count(1, X, A, 1.0), rtol=1e-14)
    assert true_mean_count(1, [0.3, 0.1, 0.0], 0, 0.0) == 0.0


def test_optimal_evaluation_and_value():
    X = sample_covariates(200_000, np.random.default_rng(3))
    res = evaluate_regime(lambda Z: optimal_regime(1, Z), X, 1, 2.0)
    assert res["accuracy"] == 1.0
    assert res["value"] == pytest.approx(math.exp(0.5 - 0.8), abs=0.02)
    # every rule is at least the optimal value on the same test set
    rng = np.random.default_rng(4)
    for _ in range(5):
        other = evaluate_regime(rng.integers(0, 2, len(X)), X, 1, 2.0)
        assert other["value"] > res["value"]
        assert other["accuracy"] < 1.0


def test_scenario_one_marginal_share():
    c = simulate_cohort(1, 100_000, np.random.default_rng(5))
    p = c.A.mean()
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / c.n)


def test_scenario_two_shares_match_quadrature():
    truth = gauss_hermite_shares()
    assert truth.sum() == pytest.approx(1.0, abs=1e-12)
    c = simulate_cohort(2, 100_000, np.random.default_rng(6))
    emp = np.bincount(c.A, minlength=3) / c.n
    se = np.sqrt(truth * (1 - truth) / c.n)
    assert np.all(np.abs(emp - truth) < 3 * se)


@pytest.mark.xfail(strict=True, reason="the design's true shares are (0.365, 0.333, 0.302); see decisions ledger")
def test_scenario_two_shares_match_stated_percentages():
    c = simulate_cohort(2, 100_000, np.random.default_rng(6))
    emp = np.bincount(c.A, minlength=3) / c.n
    stated = np.array([0.40, 0.30, 0.30])
    se = np.sqrt(stated * (1 - stated) / c.n)
    assert np.all(np.abs(emp - stated) < 3 * se)


@pytest.mark.parametrize("scenario", [1, 2])
def test_generated_cohort_contract(scenario):
    spec = ScenarioSpec(scenario, n=400, seed=11, test_size=100)
    data = gen_scenario(spec, 0)
    c = data.cohort
    assert np.all((c.C >= spec.tau - 1) & (c.C <= spec.tau))
    assert np.all(c.event_times <= c.C[c.event_owner])
    assert np.all(c.event_times > 0)
    assert c.k == spec.k and set(np.unique(c.A)) <= set(range(spec.k))
    assert data.X_test.shape == (100, 3)


def test_determinism_and_stream_independence():
    spec = ScenarioSpec(1, n=200, seed=3, test_size=50)
    a, b = gen_scenario(spec, 4), gen_scenario(spec, 4)
    np.testing.assert_array_equal(a.cohort.C, b.cohort.C)
    np.testing.assert_array_equal(a.cohort.event_times, b.cohort.event_times)
    np.testing.assert_array_equal(a.X_test, b.X_test)
    other = gen_scenario(spec, 5)
    assert not np.array_equal(a.cohort.C, other.cohort.C)
    # the test stream does not depend on the training size
    bigger = gen_scenario(ScenarioSpec(1, n=300, seed=3, test_size=50), 4)
    np.testing.assert_array_equal(a.X_test, bigger.X_test)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(3, n=10)
    with pytest.raises(ValueError):
        ScenarioSpec(1, n=10, horizons=(5.0,))
    with pytest.raises(ValueError):
        run_experiment(ScenarioSpec(1, n=10, replicates=1), methods=("Nope",))


def test_optimal_only_experiment():
    rep = run_experiment(ScenarioSpec(2, n=50, replicates=3, test_size=200), methods=("Optimal",))
    assert [r["accuracy"] for r in rep.records] == [1.0, 1.0, 1.0]
    assert rep.mean("Optimal", "accuracy") == 1.0
    text = rep.to_csv()
    assert text.startswith("# scenario=2")
    assert "replicate,t,method,accuracy,value,status" in text


def test_full_replicate_runs_every_method():
    spec = ScenarioSpec(1, n=200, seed=7, test_size=500)
    recs = run_replicate(spec, 0)
    assert [r["method"] for r in recs] == list(METHODS)
    assert all(r["status"] == "ok" for r in recs)
    opt = next(r for r in recs if r["method"] == "Optimal")
    assert all(r["value"] >= opt["value"] - 1e-12 for r in recs)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_failures_are_recorded_not_dropped():
    # a cohort this small cannot support the SMR fit in every replicate
    spec = ScenarioSpec(1, n=2, replicates=2, test_size=20)
    rep = run_experiment(spec, methods=("ReCL-SMR", "Optimal"))
    assert len(rep.records) == 4
    failed = rep.failures()
    assert failed and all(r["status"].startswith("failed:") for r in failed)
    assert all(math.isnan(r["value"]) for r in failed)
    row = next(r for r in rep.summary() if r["method"] == "ReCL-SMR")
    assert row["replicates"] == 2 - len(failed)


def test_parallel_matches_serial():
    spec = ScenarioSpec(1, n=80, replicates=2, test_size=100, seed=9)
    methods = ("ReCL-IPW", "Random", "Optimal")
    serial = run_experiment(spec, methods)
    parallel = run_experiment(spec, methods, n_jobs=2)
    assert serial.to_csv() == parallel.to_csv()
    assert isinstance(parallel, ExperimentReport)
