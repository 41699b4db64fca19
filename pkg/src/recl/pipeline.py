"""End-to-end ITR estimation: pseudo-observations -> SMR -> PS -> costs -> tree."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import Cohort
from .contrast import CostMatrix, binary_contrast, cost_matrix
from .crf import first_event_pseudo_observations, pseudo_observations
from .cscls import ExpandedData, TreeConfig, TreeRegime, expand, fit_weighted_tree
from .propensity import Formula, PsModel, fit_propensity
from .smr import SmrFit, fit_smr


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@dataclass(frozen=True)
class RunConfig:
    method: str = "AIPW"
    t: float = 1.0
    ps_formula: str | tuple | None = None
    tree: TreeConfig = field(default_factory=TreeConfig)
    outcome: str = "recurrent"  # or "first" (first-event comparator)
    smr_tol: float = 1e-8
    smr_max_iter: int = 50
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", self.method.upper())
        if self.method not in ("OR", "IPW", "AIPW"):
            raise ValueError(f"method must be OR, IPW or AIPW, got {self.method!r}")
        if not self.t > 0:
            raise ValueError("horizon t must be > 0")
        if self.outcome not in ("recurrent", "first"):
            raise ValueError("outcome must be 'recurrent' or 'first'")

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


@dataclass
class ItrResult:
    tree: TreeRegime
    costs: CostMatrix
    smr: SmrFit | None = None
    ps: PsModel | None = None
    pos: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(name, exc) from exc


def needs_ps(method: str) -> bool:
    return method.upper() in ("IPW", "AIPW")


def fit_itr(
    cohort: Cohort,
    config: RunConfig,
    ps: PsModel | None = None,
    smr: SmrFit | None = None,
    pos: np.ndarray | None = None,
) -> ItrResult:
    """Estimate a tree regime.  Precomputed stage outputs may be passed in to
    share work between methods; otherwise each needed stage is fitted here.

    A propensity source is required for IPW/AIPW: either ``ps`` or
    ``config.ps_formula``.
    """
    method = config.method
    notes = []
    if needs_ps(method) and ps is None and config.ps_formula is None:
        raise StageError("propensity", ValueError("propensity required for IPW/AIPW (formula or external table)"))
    if cohort.k < 2:
        raise StageError("input", ValueError("need at least two treatment arms"))

    if needs_ps(method) and pos is None:
        po_fn = pseudo_observations if config.outcome == "recurrent" else first_event_pseudo_observations
        pos = _stage("pseudo-observations", po_fn, cohort, config.t)
    if method in ("OR", "AIPW") and smr is None:
        smr = _stage("smr", fit_smr, cohort, tol=config.smr_tol, max_iter=config.smr_max_iter)
        notes.append(f"smr: {smr.iterations} iterations, |U|_inf={smr.score_norm:.3e}")
    if needs_ps(method) and ps is None:
        ps = _stage("propensity", fit_propensity, cohort, Formula.parse(config.ps_formula))
        notes.extend(ps.warnings)

    cm = _stage("costs", cost_matrix, cohort, method, config.t, fit=smr, ps=ps, pos=pos)
    data = expand(cm, cohort.X)
    tree = _stage("tree", fit_weighted_tree, data, config.tree, method=method, t=config.t)
    return ItrResult(tree=tree, costs=cm, smr=smr, ps=ps, pos=pos, notes=notes)


def binary_examples(C: np.ndarray, W: np.ndarray, X) -> ExpandedData:
    """Binary C-learning data: label W with weight |C| (one row per subject)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return ExpandedData(X=X, labels=np.asarray(W, dtype=int), weights=np.abs(C), k=2)


def fit_itr_binary(cohort: Cohort, config: RunConfig, ps=None, smr=None, pos=None) -> tuple[TreeRegime, np.ndarray, np.ndarray]:
    """Two-arm path through (C, W) instead of the cost matrix; returns (tree, C, W)."""
    method = config.method
    if method in ("OR", "AIPW") and smr is None:
        smr = fit_smr(cohort, tol=config.smr_tol, max_iter=config.smr_max_iter)
    if needs_ps(method):
        if ps is None:
            ps = fit_propensity(cohort, Formula.parse(config.ps_formula))
        if pos is None:
            pos = pseudo_observations(cohort, config.t)
    C, W = binary_contrast(cohort, method, config.t, fit=smr, ps=ps, pos=pos)
    tree = fit_weighted_tree(binary_examples(C, W, cohort.X), config.tree, method=method, t=config.t)
    return tree, C, W

