"""Real-data evaluation: IPW empirical value, concordance groups, group CRF export."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort
from .crf import StepFunction, group_crf, pseudo_observations
from .cscls import TreeRegime
from .propensity import PsModel

UNADJUSTED = "unadjusted Nelson-Aalen"
READMISSION_HORIZONS = (316.0, 2176.0)


class EvaluationError(ValueError):
    pass


def regime_actions(cohort: Cohort, regime) -> np.ndarray:
    """Recommended arm per subject from a tree, a callable on X, or an array."""
    if isinstance(regime, TreeRegime):
        return regime.assign_many(cohort.X)
    if callable(regime):
        return np.asarray(regime(cohort.X), dtype=int)
    actions = np.asarray(regime, dtype=int)
    if actions.shape != (cohort.n,):
        raise EvaluationError(f"expected {cohort.n} actions, got shape {actions.shape}")
    return actions


def empirical_value(
    cohort: Cohort,
    regime,
    ps: PsModel | np.ndarray,
    t: float,
    pos: np.ndarray | None = None,
    name: str = "regime",
) -> float:
    """Inverse-propensity weighted mean of pseudo-observations over concordant subjects.

    The weight uses the probability of the *received* arm.
    """
    actions = regime_actions(cohort, regime)
    P = ps.for_cohort(cohort) if isinstance(ps, PsModel) else np.asarray(ps, dtype=float)
    if pos is None:
        pos = pseudo_observations(cohort, t)
    match = cohort.A == actions
    if not match.any():
        raise EvaluationError(f"{name}: no subject received the recommended treatment")
    w = match / P[np.arange(cohort.n), cohort.A]
    return float(np.sum(w * pos) / np.sum(w))


def concordance_split(cohort: Cohort, regime) -> tuple[list[str], list[str]]:
    actions = regime_actions(cohort, regime)
    match = cohort.A == actions
    ids = np.asarray(cohort.ids, dtype=object)
    return list(ids[match]), list(ids[~match])


def _group_curve(cohort: Cohort, ids) -> StepFunction | None:
    return group_crf(cohort, ids) if ids else None


def export_group_crfs(cohort: Cohort, split, grid) -> tuple[str, str]:
    """CSV texts (concordant, disconcordant) of group curves sampled on ``grid``.

    An empty group yields a header-only file.
    """
    grid = np.asarray(grid, dtype=float)
    out = []
    for label, ids in zip(("concordant", "disconcordant"), split):
        curve = _group_curve(cohort, list(ids))
        if curve is None:
            buf = io.StringIO()
            buf.write(f"# {label} group ({UNADJUSTED}), empty\n")
            buf.write("time,value\n")
            out.append(buf.getvalue())
        else:
            out.append(curve.to_csv(grid, label=f"{label} group ({UNADJUSTED}), n={len(ids)}"))
    return out[0], out[1]


def default_horizons(cohort: Cohort) -> tuple[float, float]:
    """(1/3 quantile of observed time, maximum observed time); the readmission
    schema (covariates sex and dukes/stage) uses 316 and 2176 days."""
    names = {c.lower() for c in cohort.covariate_names}
    if "sex" in names and ({"dukes", "stage"} & names):
        return READMISSION_HORIZONS
    return float(np.quantile(cohort.C, 1 / 3)), float(cohort.C.max())


@dataclass
class ValueReport:
    horizons: tuple[float, ...]
    values: dict = field(default_factory=dict)  # method -> {t: value}
    splits: dict = field(default_factory=dict)  # (method, t) -> (concordant, disconcordant)
    crf_files: dict = field(default_factory=dict)  # (method, t) -> (path, path)

    def add(self, method: str, t: float, value: float, split=None):
        self.values.setdefault(method, {})[t] = value
        if split is not None:
            self.splits[(method, t)] = split

    def to_csv(self) -> str:
        """Methods as columns and horizons as rows, as in the usual results table."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        methods = list(self.values)
        w.writerow(["t", *methods])
        for t in self.horizons:
            row = [repr(float(t))]
            for m in methods:
                v = self.values[m].get(t)
                row.append("" if v is None else f"{v:.6g}")
            w.writerow(row)
        return buf.getvalue()
