"""Cumulative rate functions and jackknife pseudo-observations."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, CohortError


class DegenerateLeaveOneOut(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous, nondecreasing step function that is 0 before ``knots[0]``."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if knots.size > 1 and np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if values.size and (values[0] < 0 or np.any(np.diff(values) < 0)):
            raise ValueError("values must be nonnegative and nondecreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return np.array_equal(self.knots, other.knots) and np.array_equal(self.values, other.values)

    @classmethod
    def zero(cls) -> "StepFunction":
        return cls(np.zeros(0), np.zeros(0))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right")
        padded = np.concatenate([[0.0], self.values])
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(self.values, prepend=0.0)

    def to_csv(self, grid=None, label: str | None = None) -> str:
        """Two-column ``time,value`` CSV; on the knots unless a grid is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if label:
            buf.write(f"# {label}\n")
        w.writerow(["time", "value"])
        times = self.knots if grid is None else np.asarray(grid, dtype=float)
        vals = self(times) if len(times) else np.zeros(0)
        for t, v in zip(np.atleast_1d(times), np.atleast_1d(vals)):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "StepFunction":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines[1:]))
        if not rows:
            return cls.zero()
        t = np.array([float(r[0]) for r in rows])
        v = np.array([float(r[1]) for r in rows])
        return cls(t, v)


def _event_table(cohort: Cohort):
    """Distinct event times s, event counts d(s) and risk-set sizes R(s)."""
    times, d = np.unique(cohort.event_times, return_counts=True)
    c_sorted = np.sort(cohort.C)
    risk = cohort.n - np.searchsorted(c_sorted, times, side="left")
    return times, d.astype(float), risk.astype(float)


def nelson_aalen(cohort: Cohort) -> StepFunction:
    """Nelson-Aalen type estimator of the marginal cumulative rate function."""
    if cohort.n == 0:
        raise CohortError("empty cohort")
    times, d, risk = _event_table(cohort)
    if times.size == 0:
        return StepFunction.zero()
    return StepFunction(times, np.cumsum(d / risk))


def group_crf(cohort: Cohort, member) -> StepFunction:
    """Unadjusted Nelson-Aalen curve of a subgroup given by subject ids."""
    member = list(member)
    if not member:
        raise CohortError("empty subgroup")
    return nelson_aalen(cohort.subset(member))


def pseudo_observations(cohort: Cohort, t: float) -> np.ndarray:
    """Jackknife pseudo-observations n*L(t) - (n-1)*L^{-i}(t) of the CRF at t.

    Uses the leave-one-out identity
    L^{-i}(t) = sum_{s<=t} (d(s) - dN_i(s)) / (R(s) - Y_i(s)).
    While subject i is at risk the jump of the pseudo-observation is
    (n-1) dN_i / (R-1) + d (R-n) / (R (R-1)); after its censoring it is d / R.
    Written this way the result is exactly N_i(t) when nobody is censored before t.
    """
    return pseudo_observations_grid(cohort, [t])[:, 0]


def pseudo_observations_grid(cohort: Cohort, times) -> np.ndarray:
    """Pseudo-observations at several horizons from one pass; shape (n, len(times))."""
    n = cohort.n
    if n < 2:
        raise CohortError("pseudo-observations need n >= 2")
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("horizon t must be > 0")
    s, d, risk = _event_table(cohort)
    if s.size == 0:
        return np.zeros((n, times.size))

    # risk == 1 at s means the only subject at risk owns every event there and
    # its leave-one-out jump is empty: the pseudo-observation jump is n * d
    many = risk > 1
    r1 = np.maximum(risk - 1, 1)
    own_coef = np.where(many, (n - 1) / r1, 0.0)
    common = d * np.where(many, (risk - n) / (risk * r1), float(n))
    # cumulative sums indexed by "number of distinct event times <= u"
    cum_full = np.concatenate([[0.0], np.cumsum(d / risk)])
    cum_common = np.concatenate([[0.0], np.cumsum(common)])

    ev_pos = np.searchsorted(s, cohort.event_times)
    own_jump = own_coef[ev_pos]
    bad = (risk[ev_pos] <= 1) & (d[ev_pos] > 1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise DegenerateLeaveOneOut(
            f"empty leave-one-out risk set for subject {cohort.ids[cohort.event_owner[j]]} "
            f"at time {cohort.event_times[j]}"
        )

    out = np.empty((n, times.size))
    c_pos = np.searchsorted(s, cohort.C, side="right")
    for col, t in enumerate(times):
        m_t = np.searchsorted(s, t, side="right")
        m_i = np.minimum(c_pos, m_t)
        own = np.bincount(
            cohort.event_owner, weights=own_jump * (cohort.event_times <= t), minlength=n
        )
        out[:, col] = own + cum_common[m_i] + (cum_full[m_t] - cum_full[m_i])
    return out


def naive_pseudo_observations(cohort: Cohort, t: float) -> np.ndarray:
    """Reference implementation: refit Nelson-Aalen n times from the definition.

    Intentionally written with plain loops over subjects and event times so it
    shares no code with :func:`pseudo_observations`.
    """
    n = cohort.n
    if n < 2:
        raise CohortError("pseudo-observations need n >= 2")

    def na_at(members):
        pool = [cohort.subjects[j] for j in members]
        times = sorted({e for sub in pool for e in sub.event_times if e <= t})
        total = 0.0
        for s in times:
            dN = sum(sub.event_times.count(s) for sub in pool)
            at_risk = sum(1 for sub in pool if sub.censor_time >= s)
            if at_risk == 0:
                raise DegenerateLeaveOneOut(f"empty risk set at {s}")
            total += dN / at_risk
        return total

    everyone = list(range(n))
    full = na_at(everyone)
    return np.array(
        [n * full - (n - 1) * na_at([j for j in everyone if j != i]) for i in everyone]
    )


def first_event_pseudo_observations(cohort: Cohort, t: float) -> np.ndarray:
    """Pseudo-observations of P(first event <= t) = 1 - KM(t).

    Each subject contributes a single time: its first event if any, else its
    censoring time.  Leave-one-out Kaplan-Meier curves are evaluated in one
    vectorised (n x E) pass.
    """
    n = cohort.n
    if n < 2:
        raise CohortError("pseudo-observations need n >= 2")
    first = np.full(n, np.inf)
    has = cohort.n_events > 0
    starts = np.concatenate([[0], np.cumsum(cohort.n_events)[:-1]])
    first[has] = cohort.event_times[starts[has]]
    obs_time = np.where(has, first, cohort.C)

    s = np.unique(obs_time[has & (obs_time <= t)])
    if s.size == 0:
        return np.zeros(n)
    d = np.array([np.sum((obs_time == u) & has) for u in s], dtype=float)
    risk = np.array([np.sum(obs_time >= u) for u in s], dtype=float)
    km_full = np.prod(1.0 - d / risk)

    d_i = d[None, :] - ((obs_time[:, None] == s[None, :]) & has[:, None])
    r_i = risk[None, :] - (obs_time[:, None] >= s[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(r_i > 0, d_i / np.where(r_i > 0, r_i, 1.0), 0.0)
    km_loo = np.prod(1.0 - frac, axis=1)
    return n * (1.0 - km_full) - (n - 1) * (1.0 - km_loo)
