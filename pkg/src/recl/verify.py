"""Small-instance oracle checks behind ``recl verify``.

Each check returns ``(name, passed, detail)``.
"""

from __future__ import annotations

import numpy as np

from .cohort import Cohort
from .contrast import from_signals
from .crf import naive_pseudo_observations, pseudo_observations
from .cscls import (
    TreeConfig,
    brute_force_regime,
    enumerate_regimes,
    expand,
    fit_weighted_tree,
    regime_cost,
)
from .pipeline import RunConfig, fit_itr, fit_itr_binary


def random_cohort(rng: np.random.Generator, n: int, k: int = 2, p: int = 2, censor_frac: float = 0.5,
                  grid: float | None = 0.25) -> Cohort:
    """Small random cohort with mixed censoring; ``grid`` rounds event times so
    different subjects share event times."""
    X = rng.standard_normal((n, p))
    A = rng.integers(0, k, n)
    A[:k] = np.arange(k)
    tau = 4.0
    C = np.where(rng.random(n) < censor_frac, rng.uniform(0.3, tau, n), tau)
    if grid:
        C = np.maximum(np.round(C / grid) * grid, grid)
    events = []
    for i in range(n):
        m = rng.poisson(1.5)
        ev = rng.uniform(0, C[i], m)
        if grid:
            ev = np.ceil(ev / grid) * grid
        ev = np.unique(ev[(ev > 0) & (ev <= C[i])])
        events.append(ev)
    return Cohort.from_arrays(X, A, C, events, k=k, tau=tau)


def check_pseudo_observations(rng, n_instances=200) -> tuple:
    worst = 0.0
    for _ in range(n_instances):
        cohort = random_cohort(rng, int(rng.integers(2, 51)), k=2)
        t = float(rng.uniform(0.2, 4.0))
        diff = np.max(np.abs(pseudo_observations(cohort, t) - naive_pseudo_observations(cohort, t)))
        worst = max(worst, diff)
    return "pseudo-observations efficient == naive", bool(worst <= 1e-10), f"max |diff| = {worst:.2e} over {n_instances} cohorts"


def check_uncensored_pos(rng, n_instances=50) -> tuple:
    exact = True
    for _ in range(n_instances):
        cohort = random_cohort(rng, int(rng.integers(2, 51)), censor_frac=0.0)
        t = float(rng.uniform(0.2, 4.0))
        exact &= bool(np.array_equal(pseudo_observations(cohort, t), cohort.counts_at(t).astype(float)))
    return "pseudo-observations without censoring == N_i(t)", exact, f"{n_instances} cohorts"


def random_splits(rng, X, m):
    splits = set()
    while len(splits) < m:
        j = int(rng.integers(0, X.shape[1]))
        vals = np.unique(X[:, j])
        if vals.size < 2:
            continue
        pos = int(rng.integers(0, vals.size - 1))
        splits.add((j, float(0.5 * (vals[pos] + vals[pos + 1]))))
    return sorted(splits)


def check_expansion_oracle(rng, n_instances=100) -> tuple:
    """On every regime in the enumerated space, the expanded weighted
    misclassification differs from the direct cost by a regime-free offset,
    and the brute-force objective matches the enumerated minimum."""
    worst = 0.0
    agree = True
    for _ in range(n_instances):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(2, 4))
        X = np.round(rng.standard_normal((n, 2)), 2)
        cm = from_signals(rng.exponential(1.0, (n, k)))
        data = expand(cm, X)
        splits = random_splits(rng, X, min(3, max(1, n - 1))) if n > 1 else []
        # expanded loss = sum of all weights - sum_i max_s C_is + direct cost
        offset = data.weights.sum() - cm.costs.max(axis=1).sum()
        best_exp, best_dir = np.inf, np.inf
        for _, _, actions in enumerate_regimes(X, splits, 2, k):
            direct = regime_cost(cm, actions)
            expanded = data.misclassification(np.repeat(actions, k))
            worst = max(worst, abs(expanded - offset - direct))
            best_exp = min(best_exp, expanded)
            best_dir = min(best_dir, direct)
        bf = brute_force_regime(cm, X, splits, depth=2)["objective"]
        agree &= abs(bf - best_dir) <= 1e-10
        agree &= abs(best_exp - offset - best_dir) <= 1e-10
    ok = bool(agree and worst <= 1e-10)
    return "expansion objective identity / brute-force optimum", ok, f"max identity error = {worst:.2e} over {n_instances} instances"


def same_tree(a: dict, b: dict, tol: float = 1e-12) -> bool:
    """Identical structure, splits and actions; shares and leaf distributions
    agree up to summation-order rounding."""
    if a["action"] != b["action"] or ("feature" in a) != ("feature" in b):
        return False
    for key in ("weight_share", "population_share"):
        if abs(a[key] - b[key]) > tol:
            return False
    if not np.allclose(a["distribution"], b["distribution"], rtol=0, atol=tol):
        return False
    if "feature" not in a:
        return True
    return (a["feature"] == b["feature"] and a["threshold"] == b["threshold"]
            and same_tree(a["left"], b["left"], tol) and same_tree(a["right"], b["right"], tol))


def check_k2_paths(rng, n_instances=20) -> tuple:
    same = True
    for _ in range(n_instances):
        cohort = random_cohort(rng, int(rng.integers(20, 60)), k=2, grid=None)
        for method in ("IPW", "AIPW"):
            cfg = RunConfig(method, 2.0, "all", TreeConfig(max_depth=2))
            multi = fit_itr(cohort, cfg)
            tree_b, C, W = fit_itr_binary(cohort, cfg, ps=multi.ps, smr=multi.smr, pos=multi.pos)
            same &= same_tree(tree_b.to_dict()["root"], multi.tree.to_dict()["root"])
            same &= bool(np.array_equal(W, multi.costs.best_label))
            same &= bool(np.allclose(np.abs(C), multi.costs.costs.max(axis=1), rtol=0, atol=1e-12))
    return "K=2 binary path == multi-arm path", same, f"{n_instances} cohorts x (IPW, AIPW)"


def check_tree_vs_brute_force(rng, n_instances=30) -> tuple:
    ok = True
    for _ in range(n_instances):
        n, k = 8, 3
        X = np.round(rng.standard_normal((n, 2)), 2)
        cm = from_signals(rng.exponential(1.0, (n, k)))
        tree = fit_weighted_tree(expand(cm, X), TreeConfig(max_depth=2))
        splits = sorted({(nd.feature, nd.threshold) for nd in tree.nodes() if not nd.is_leaf})
        if len(splits) > 6:
            continue
        bf = brute_force_regime(cm, X, splits, depth=2)["objective"]
        ok &= bf <= regime_cost(cm, tree.assign_many(X)) + 1e-12
    return "brute-force optimum <= fitted tree cost", ok, f"{n_instances} random 8x3 instances"


def run_all(n_instances: int = 50, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        check_pseudo_observations(rng, n_instances),
        check_uncensored_pos(rng, max(1, n_instances // 4)),
        check_expansion_oracle(rng, n_instances),
        check_k2_paths(rng, max(1, n_instances // 5)),
        check_tree_vs_brute_force(rng, max(1, n_instances // 2)),
    ]
