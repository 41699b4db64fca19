"""Simulation scenarios with known optimal regimes, and replicate experiments.

Scenario 1 (two arms) and Scenario 2 (three arms, coded 0/1/2) draw
X ~ N(0, I_3), treatment from a known propensity model, censoring from
Uniform(tau - 1, tau) and event times from a homogeneous Poisson process with
subject-specific rate ``rate(x, a) * 0.5`` (baseline mean mu(t) = 0.5 t).

Seeding: every replicate owns ``SeedSequence(seed, spawn_key=(replicate,))``
whose three children drive the training cohort, the test covariates and the
Random comparator.  Results are therefore identical whether replicates run
serially or in parallel.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort
from .crf import first_event_pseudo_observations, pseudo_observations
from .cscls import TreeConfig, TreeRegime
from .pipeline import RunConfig, fit_itr
from .propensity import Formula, fit_propensity
from .smr import fit_smr

METHODS = ("ReCL-AIPW-T", "ReCL-AIPW-F", "ReCL-IPW", "ReCL-SMR", "First", "Random", "Optimal")
BASELINE_SLOPE = 0.5
PS_FORMULA_TRUE = "x1,x2,x3"
PS_FORMULA_FALSE = "x1,exp(x3)"


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    n: int
    horizons: tuple[float, ...] = (3.0,)
    seed: int = 1
    replicates: int = 20
    tau: float = 4.0
    test_size: int = 5000
    tree: TreeConfig = field(default_factory=TreeConfig)

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        object.__setattr__(self, "horizons", tuple(float(t) for t in np.atleast_1d(self.horizons)))
        if any(not 0 < t <= self.tau for t in self.horizons):
            raise ValueError(f"horizons must lie in (0, tau={self.tau}]")

    @property
    def k(self) -> int:
        return 2 if self.scenario == 1 else 3


def n_arms(scenario: int) -> int:
    return 2 if scenario == 1 else 3


def propensity_truth(scenario: int, X) -> np.ndarray:
    """(n, K) true treatment probabilities."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x1, x2 = X[:, 0], X[:, 1]
    if scenario == 1:
        p1 = 1.0 / (1.0 + np.exp(-(0.3 * x1 - 0.5 * x2)))
        return np.column_stack([1 - p1, p1])
    w = np.column_stack([np.ones_like(x1), np.exp(x1 - x2), np.exp(0.5 * x1 - x2)])
    return w / w.sum(axis=1, keepdims=True)


def optimal_regime(scenario: int, x):
    """True optimal action(s); scalar for one covariate vector."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    x1, x2 = X[:, 0], X[:, 1]
    if scenario == 1:
        g = ((x1 > -1) & (x2 > -0.5)).astype(int)
    else:
        g = (x1 > -0.5) * ((x2 > -0.5).astype(int) + (x2 > 0.5).astype(int))
    return int(g[0]) if single else g


def rate_multiplier(scenario: int, X, A) -> np.ndarray:
    """exp{...} factor of the rate; the event intensity is this times 0.5."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.asarray(A, dtype=float)
    x1, x2 = X[:, 0], X[:, 1]
    g = optimal_regime(scenario, X)
    penalty = np.abs(1.5 * x1 - 0.5) * (A - g) ** 2
    if scenario == 1:
        return np.exp(x2 + penalty - 0.8)
    return np.exp(0.3 * penalty - 0.3)


def true_mean_count(scenario: int, x, a, t: float):
    """E[N(t) | X=x, A=a] = rate multiplier * 0.5 t."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    out = rate_multiplier(scenario, np.atleast_2d(X), np.atleast_1d(a)) * BASELINE_SLOPE * t
    return float(out[0]) if single else out


def _streams(seed: int, replicate: int):
    ss = np.random.SeedSequence(seed, spawn_key=(replicate,))
    return [np.random.default_rng(child) for child in ss.spawn(3)]


def sample_covariates(m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((m, 3))


def simulate_cohort(scenario: int, n: int, rng: np.random.Generator, tau: float = 4.0) -> Cohort:
    """Draw one training cohort (count-then-uniform-order-statistics sampling)."""
    X = sample_covariates(n, rng)
    P = propensity_truth(scenario, X)
    u = rng.random(n)
    A = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
    A = np.minimum(A, P.shape[1] - 1)
    C = rng.uniform(tau - 1.0, tau, n)
    intensity = rate_multiplier(scenario, X, A) * BASELINE_SLOPE
    counts = rng.poisson(intensity * C)
    events = [np.sort(rng.uniform(0.0, C[i], counts[i])) for i in range(n)]
    return Cohort.from_arrays(X, A, C, events, k=n_arms(scenario), tau=tau)


@dataclass
class GeneratedData:
    cohort: Cohort
    X_test: np.ndarray
    rng_random: np.random.Generator
    scenario: int


def gen_scenario(spec: ScenarioSpec, replicate: int) -> GeneratedData:
    rng_train, rng_test, rng_random = _streams(spec.seed, replicate)
    cohort = simulate_cohort(spec.scenario, spec.n, rng_train, spec.tau)
    X_test = sample_covariates(spec.test_size, rng_test)
    return GeneratedData(cohort, X_test, rng_random, spec.scenario)


def evaluate_regime(regime, X_test, scenario: int, t: float) -> dict:
    """Accuracy against the true optimal rule and analytic value on a test set.

    ``regime`` may be a :class:`TreeRegime`, a callable mapping X to actions,
    or an array of actions.
    """
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    if isinstance(regime, TreeRegime):
        actions = regime.assign_many(X_test)
    elif callable(regime):
        actions = np.asarray(regime(X_test), dtype=int)
    else:
        actions = np.asarray(regime, dtype=int)
    g = optimal_regime(scenario, X_test)
    return {
        "accuracy": float(np.mean(actions == g)),
        "value": float(np.mean(true_mean_count(scenario, X_test, actions, t))),
    }


def _method_configs(t: float, tree: TreeConfig) -> dict:
    return {
        "ReCL-AIPW-T": RunConfig("AIPW", t, PS_FORMULA_TRUE, tree),
        "ReCL-AIPW-F": RunConfig("AIPW", t, PS_FORMULA_FALSE, tree),
        "ReCL-IPW": RunConfig("IPW", t, PS_FORMULA_TRUE, tree),
        "ReCL-SMR": RunConfig("OR", t, None, tree),
        "First": RunConfig("IPW", t, PS_FORMULA_TRUE, tree, outcome="first"),
    }


class _Lazy:
    """Memoise shared stage outputs (SMR fit, PS fits, POs) within a replicate."""

    def __init__(self):
        self._cache = {}

    def get(self, key, fn):
        if key not in self._cache:
            try:
                self._cache[key] = (True, fn())
            except Exception as exc:  # noqa: BLE001 - surfaced per method
                self._cache[key] = (False, exc)
        ok, val = self._cache[key]
        if not ok:
            raise val
        return val


def run_replicate(spec: ScenarioSpec, replicate: int, methods=METHODS) -> list[dict]:
    data = gen_scenario(spec, replicate)
    cohort = data.cohort
    shared = _Lazy()
    records = []
    for t in spec.horizons:
        configs = _method_configs(t, spec.tree)
        for method in methods:
            rec = {"replicate": replicate, "t": t, "method": method, "status": "ok"}
            try:
                if method == "Optimal":
                    regime = lambda X: optimal_regime(spec.scenario, X)  # noqa: E731
                elif method == "Random":
                    regime = data.rng_random.integers(0, spec.k, len(data.X_test))
                else:
                    cfg = configs[method]
                    smr = ps = pos = None
                    if cfg.method in ("OR", "AIPW"):
                        smr = shared.get("smr", lambda: fit_smr(cohort))
                    if cfg.method in ("IPW", "AIPW"):
                        f = cfg.ps_formula
                        ps = shared.get(("ps", f), lambda: fit_propensity(cohort, Formula.parse(f)))
                        if cfg.outcome == "first":
                            pos = shared.get(("first", t), lambda: first_event_pseudo_observations(cohort, t))
                        else:
                            pos = shared.get(("po", t), lambda: pseudo_observations(cohort, t))
                    regime = fit_itr(cohort, cfg, ps=ps, smr=smr, pos=pos).tree
                rec.update(evaluate_regime(regime, data.X_test, spec.scenario, t))
            except Exception as exc:  # noqa: BLE001 - recorded, never silently dropped
                rec.update(accuracy=math.nan, value=math.nan, status=f"failed: {type(exc).__name__}: {exc}")
            records.append(rec)
    return records


@dataclass
class ExperimentReport:
    spec: ScenarioSpec
    records: list[dict]

    def ok_records(self):
        return [r for r in self.records if r["status"] == "ok"]

    def failures(self):
        return [r for r in self.records if r["status"] != "ok"]

    def summary(self) -> list[dict]:
        """Mean and standard error per (t, method) over successful replicates."""
        out = []
        keys = []
        for r in self.records:
            key = (r["t"], r["method"])
            if key not in keys:
                keys.append(key)
        for t, method in keys:
            rows = [r for r in self.ok_records() if r["t"] == t and r["method"] == method]
            m = len(rows)
            row = {"t": t, "method": method, "replicates": m}
            for metric in ("accuracy", "value"):
                vals = np.array([r[metric] for r in rows])
                row[f"{metric}_mean"] = float(vals.mean()) if m else math.nan
                row[f"{metric}_se"] = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
            out.append(row)
        return out

    def mean(self, method: str, metric: str, t: float | None = None) -> float:
        t = self.spec.horizons[0] if t is None else t
        for row in self.summary():
            if row["method"] == method and row["t"] == t:
                return row[f"{metric}_mean"]
        raise KeyError(method)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(_header_comment(self.spec))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "t", "method", "accuracy", "value", "status"])
        for r in self.records:
            w.writerow([r["replicate"], _fmt(r["t"]), r["method"], _fmt(r["accuracy"]), _fmt(r["value"]), r["status"]])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        buf.write(_header_comment(self.spec))
        w = csv.writer(buf, lineterminator="\n")
        cols = ["t", "method", "replicates", "accuracy_mean", "accuracy_se", "value_mean", "value_se"]
        w.writerow(cols)
        for row in self.summary():
            w.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def _header_comment(spec: ScenarioSpec) -> str:
    arms = ",".join(f"{j}={j}" for j in range(spec.k))
    return (
        f"# scenario={spec.scenario} n={spec.n} seed={spec.seed} replicates={spec.replicates} "
        f"tau={spec.tau:g} test_size={spec.test_size} arms={arms}\n"
        "# 'First' = IPW pipeline on first-event pseudo-observations (reconstruction)\n"
    )


def run_experiment(spec: ScenarioSpec, methods=METHODS, n_jobs: int = 1) -> ExperimentReport:
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    methods = tuple(m for m in METHODS if m in methods)
    reps = range(spec.replicates)
    if n_jobs == 1:
        chunks = [run_replicate(spec, r, methods) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            chunks = list(pool.map(run_replicate, [spec] * len(reps), reps, [methods] * len(reps)))
    return ExperimentReport(spec, [rec for chunk in chunks for rec in chunk])
