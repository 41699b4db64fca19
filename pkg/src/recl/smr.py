"""Semiparametric multiplicative rates model for E[N(t) | X, A].

Rate model ``exp(theta' Z) dmu(t)`` with ``Z = (x, I(a=1)(1, x), ..., I(a=K-1)(1, x))``.
The alpha block has no intercept because mu(t) absorbs it; each treatment
block carries its own intercept (treatment main effect).  Coefficients solve
the proportional-rates estimating equation

    U(theta) = sum_i int_0^tau {Z_i - Zbar(s; theta)} dN_i(s) = 0

by Newton-Raphson, and the baseline mean is the Breslow-type estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort
from .crf import StepFunction


class SmrError(RuntimeError):
    pass


class SmrConvergenceError(SmrError):
    pass


def build_design(x, a: int, k: int) -> np.ndarray:
    """Design vector for one (covariates, action) pair."""
    x = np.asarray(x, dtype=float).ravel()
    if not 0 <= a < k:
        raise ValueError(f"action {a} outside 0..{k - 1}")
    z = np.zeros(design_dim(x.size, k))
    z[: x.size] = x
    if a > 0:
        start = x.size + (a - 1) * (x.size + 1)
        z[start] = 1.0
        z[start + 1 : start + 1 + x.size] = x
    return z


def design_dim(p: int, k: int) -> int:
    return p + (k - 1) * (p + 1)


def design_matrix(X: np.ndarray, A: np.ndarray, k: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=int)
    n, p = X.shape
    Z = np.zeros((n, design_dim(p, k)))
    Z[:, :p] = X
    ext = np.hstack([np.ones((n, 1)), X])
    for a in range(1, k):
        start = p + (a - 1) * (p + 1)
        Z[:, start : start + p + 1] = ext * (A == a)[:, None]
    return Z


def design_names(covariate_names, k: int) -> list[str]:
    names = list(covariate_names)
    for a in range(1, k):
        names += [f"arm{a}"] + [f"arm{a}:{c}" for c in covariate_names]
    return names


@dataclass(frozen=True)
class SmrFit:
    theta: np.ndarray
    baseline: StepFunction
    p: int
    k: int
    names: tuple[str, ...]
    iterations: int
    score_norm: float
    notes: tuple[str, ...] = field(default=())

    @property
    def design_spec(self) -> str:
        return (
            "Z = (x, I(a=j)*(1, x) for j=1..K-1); "
            "alpha block without intercept, one intercept per treatment block"
        )

    def summary(self) -> str:
        lines = [f"# SMR fit: {self.iterations} Newton iterations, |U|_inf = {self.score_norm:.3e}"]
        lines.append("term,coef")
        lines += [f"{nm},{c!r}" for nm, c in zip(self.names, self.theta.tolist())]
        return "\n".join(lines) + "\n"


class _RiskSetSums:
    """Risk-set weighted sums S0, S1, S2 at each distinct event time.

    Subjects are sorted by decreasing censoring time so that the risk set
    {j : C_j >= s} is a prefix and every sum is a cumulative sum.
    """

    def __init__(self, cohort: Cohort, Z: np.ndarray):
        order = np.argsort(-cohort.C, kind="stable")
        self.Z = Z[order]
        self.times, d = np.unique(cohort.event_times, return_counts=True)
        self.d = d.astype(float)
        c_desc = cohort.C[order]
        # prefix length = #{j : C_j >= s}
        self.prefix = np.searchsorted(-c_desc, -self.times, side="right")
        self.z_events_sum = Z[cohort.event_owner].sum(axis=0)

    def evaluate(self, theta: np.ndarray, second: bool = True):
        eta = self.Z @ theta
        shift = eta.max()
        w = np.exp(eta - shift)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("non-finite exponentials")
        idx = self.prefix - 1
        s0 = np.cumsum(w)[idx]
        wz = w[:, None] * self.Z
        s1 = np.cumsum(wz, axis=0)[idx]
        zbar = s1 / s0[:, None]
        score = self.z_events_sum - (self.d[:, None] * zbar).sum(axis=0)
        loglik = float(self.z_events_sum @ theta - np.sum(self.d * (np.log(s0) + shift)))
        if not second:
            return loglik, score, None, s0, shift
        s2 = np.cumsum(wz[:, :, None] * self.Z[:, None, :], axis=0)[idx]
        v = s2 / s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :]
        info = np.tensordot(self.d, v, axes=1)
        return loglik, score, info, s0, shift


def fit_smr(cohort: Cohort, tol: float = 1e-8, max_iter: int = 50) -> SmrFit:
    """Fit the SMR model by Newton iterations with step-halving.

    Raises :class:`SmrError` for cohorts without events or a rank-deficient
    design, and :class:`SmrConvergenceError` when ``max_iter`` is exhausted.
    """
    if len(cohort.event_times) == 0:
        raise SmrError("no events: SMR model is unidentifiable")
    Z = design_matrix(cohort.X, cohort.A, cohort.k)
    sums = _RiskSetSums(cohort, Z)
    q = Z.shape[1]
    theta = np.zeros(q)
    notes = []

    loglik, score, info, _, _ = sums.evaluate(theta)
    eig = np.linalg.eigvalsh(info)
    if eig[-1] <= 0 or eig[0] <= 1e-10 * eig[-1]:
        raise SmrError("rank-deficient design on the at-risk sets")

    it = 0
    while np.max(np.abs(score)) >= tol:
        if it >= max_iter:
            raise SmrConvergenceError(
                f"no convergence after {max_iter} iterations (|U|_inf={np.max(np.abs(score)):.3e})"
            )
        it += 1
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            notes.append(f"iteration {it}: ridge 1e-8 added to singular derivative")
            step = np.linalg.solve(info + 1e-8 * np.eye(q), score)
        for _ in range(31):
            cand = theta + step
            try:
                new = sums.evaluate(cand)
            except FloatingPointError:
                step = step / 2
                continue
            if new[0] >= loglik - 1e-12 * max(1.0, abs(loglik)):
                break
            step = step / 2
        else:
            raise SmrConvergenceError("step-halving failed after 30 halvings")
        theta = cand
        loglik, score, info, _, _ = new

    _, score, _, s0, shift = sums.evaluate(theta, second=False)
    baseline = StepFunction(sums.times, np.cumsum(sums.d / (s0 * np.exp(shift))))
    return SmrFit(
        theta=theta,
        baseline=baseline,
        p=cohort.p,
        k=cohort.k,
        names=tuple(design_names(cohort.covariate_names, cohort.k)),
        iterations=it,
        score_norm=float(np.max(np.abs(score))),
        notes=tuple(notes),
    )


def score(cohort: Cohort, theta) -> np.ndarray:
    """Estimating function U(theta); exposed for diagnostics and tests."""
    Z = design_matrix(cohort.X, cohort.A, cohort.k)
    return _RiskSetSums(cohort, Z).evaluate(np.asarray(theta, float), second=False)[1]


def predict_mean(fit: SmrFit, x, a: int, t: float) -> float:
    """mu*(t, x, a) = exp(theta' Z(x, a)) * mu(t)."""
    z = build_design(x, a, fit.k)
    return float(np.exp(z @ fit.theta) * fit.baseline(t))


def predict_mean_matrix(fit: SmrFit, X, t: float) -> np.ndarray:
    """(n, K) matrix of mu*(t, X_i, a) for every arm."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    base = fit.baseline(t)
    out = np.empty((X.shape[0], fit.k))
    for a in range(fit.k):
        Z = design_matrix(X, np.full(X.shape[0], a), fit.k)
        out[:, a] = np.exp(Z @ fit.theta) * base
    return out
