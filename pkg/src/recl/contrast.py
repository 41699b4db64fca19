"""Misclassification costs from OR / IPW / AIPW arm signals.

For every subject and arm we form a *signal*, an estimate of E[N(t) | X, A=a]:

* OR:   mu*(t, x, a) from the SMR fit
* IPW:  I(A=a) * PO / pi(a, x)
* AIPW: I(A=a) * PO / pi(a, x) + (1 - I(A=a) / pi(a, x)) * mu*(t, x, a)

Costs are signals minus the row minimum, and the best label is the row argmin
(smallest arm index on ties).  With two arms the pair (|C|, W) of binary
C-learning is the nonzero cost and the best label.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .crf import pseudo_observations
from .propensity import PsModel
from .smr import SmrFit, predict_mean, predict_mean_matrix

METHODS = ("OR", "IPW", "AIPW")


class ContrastError(ValueError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    horizon: float
    method: str
    costs: np.ndarray
    best_label: np.ndarray
    raw_signals: np.ndarray
    ids: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.costs.shape[0]

    @property
    def k(self) -> int:
        return self.costs.shape[1]

    def to_csv(self, treatment_labels=None) -> str:
        buf = io.StringIO()
        if treatment_labels is not None:
            buf.write("# arms: " + ",".join(f"{j}={lab}" for j, lab in enumerate(treatment_labels)) + "\n")
        buf.write(f"# method={self.method} t={self.horizon!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", *(f"cost_{j}" for j in range(self.k)), "best_label"])
        ids = self.ids or tuple(str(i + 1) for i in range(self.n))
        for sid, row, lab in zip(ids, self.costs, self.best_label):
            w.writerow([sid, *(repr(float(c)) for c in row), int(lab)])
        return buf.getvalue()


def from_signals(signals, horizon: float = float("nan"), method: str = "custom", ids=()) -> CostMatrix:
    """Shift each row of a signal matrix to a nonnegative cost row."""
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    if signals.shape[1] < 2:
        raise ContrastError("need at least two arms")
    if not np.all(np.isfinite(signals)):
        raise ContrastError("non-finite arm signals")
    best = np.argmin(signals, axis=1)  # first minimum -> smallest arm index
    costs = signals - signals[np.arange(signals.shape[0]), best][:, None]
    return CostMatrix(horizon, method, costs, best, signals, tuple(ids))


def arm_signal_or(fit: SmrFit, x, a: int, t: float) -> float:
    return predict_mean(fit, x, a, t)


def arm_signal_ipw(po: float, a_obs: int, ps: float, a: int) -> float:
    """I(a_obs = a) * po / ps, where ``ps`` is the clipped pi(a, x)."""
    return po / ps if a_obs == a else 0.0


def arm_signal_aipw(po: float, a_obs: int, ps: float, mu: float, a: int) -> float:
    ind = 1.0 if a_obs == a else 0.0
    return ind * po / ps + (1.0 - ind / ps) * mu


def signal_matrix(
    method: str,
    A: np.ndarray,
    *,
    pos: np.ndarray | None = None,
    ps: np.ndarray | None = None,
    mu: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorised signals; ``ps`` and ``mu`` are (n, K) matrices."""
    method = method.upper()
    if method == "OR":
        if mu is None:
            raise ContrastError("OR costs need an outcome model fit")
        return np.asarray(mu, dtype=float)
    if ps is None:
        raise ContrastError("propensity required for IPW/AIPW costs")
    if pos is None:
        raise ContrastError("pseudo-observations required for IPW/AIPW costs")
    ps = np.asarray(ps, dtype=float)
    n, k = ps.shape
    ind = np.zeros((n, k))
    ind[np.arange(n), np.asarray(A, dtype=int)] = 1.0
    ipw = ind * np.asarray(pos, dtype=float)[:, None] / ps
    if method == "IPW":
        return ipw
    if method == "AIPW":
        if mu is None:
            raise ContrastError("AIPW costs need an outcome model fit")
        return ipw + (1.0 - ind / ps) * mu
    raise ContrastError(f"unknown method {method!r}; expected one of {METHODS}")


def cost_matrix(
    cohort: Cohort,
    method: str,
    t: float,
    fit: SmrFit | None = None,
    ps: PsModel | np.ndarray | None = None,
    pos: np.ndarray | None = None,
) -> CostMatrix:
    """Cost matrix for ``method`` in {OR, IPW, AIPW} at horizon ``t``.

    ``ps`` may be a fitted/loaded :class:`PsModel` or a precomputed (n, K)
    probability matrix.  Pseudo-observations are computed on demand.
    """
    method = method.upper()
    if method not in METHODS:
        raise ContrastError(f"unknown method {method!r}; expected one of {METHODS}")
    if method in ("OR", "AIPW") and fit is None:
        raise ContrastError(f"{method} costs need an outcome model fit")
    if method in ("IPW", "AIPW") and ps is None:
        raise ContrastError("propensity required for IPW/AIPW costs")
    mu = predict_mean_matrix(fit, cohort.X, t) if fit is not None else None
    P = None
    if ps is not None:
        P = ps.for_cohort(cohort) if isinstance(ps, PsModel) else np.asarray(ps, dtype=float)
        if P.shape != (cohort.n, cohort.k):
            raise ContrastError(f"propensity matrix has shape {P.shape}, expected {(cohort.n, cohort.k)}")
    if method != "OR" and pos is None:
        pos = pseudo_observations(cohort, t)
    signals = signal_matrix(method, cohort.A, pos=pos, ps=P, mu=mu)
    return from_signals(signals, horizon=t, method=method, ids=cohort.ids)


def binary_contrast(cohort: Cohort, method: str, t: float, **inputs):
    """Binary contrast C = signal(1) - signal(0) and label W = I(C < 0)."""
    if cohort.k != 2:
        raise ContrastError(f"binary contrast needs K=2, cohort has K={cohort.k}")
    cm = cost_matrix(cohort, method, t, **inputs)
    C = cm.raw_signals[:, 1] - cm.raw_signals[:, 0]
    W = (C < 0).astype(int)
    return C, W
