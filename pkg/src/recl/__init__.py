"""Recurrent C-learning: tree-structured treatment regimes for recurrent events."""

__version__ = "0.1.0"

from .cohort import Cohort, CohortError, CohortSchema, Subject, at_risk, count_at, parse_cohort, read_cohort, serialize_cohort
from .contrast import CostMatrix, binary_contrast, cost_matrix
from .crf import StepFunction, group_crf, nelson_aalen, pseudo_observations
from .cscls import TreeConfig, TreeRegime, assign, brute_force_regime, expand, fit_weighted_tree, render_tree
from .evalrd import concordance_split, empirical_value, export_group_crfs
from .pipeline import RunConfig, fit_itr
from .propensity import PsModel, fit_propensity, load_external_ps, predict_ps
from .smr import SmrFit, build_design, fit_smr, predict_mean

__all__ = [
    "Cohort",
    "CohortError",
    "CohortSchema",
    "CostMatrix",
    "PsModel",
    "RunConfig",
    "SmrFit",
    "StepFunction",
    "Subject",
    "TreeConfig",
    "TreeRegime",
    "assign",
    "at_risk",
    "binary_contrast",
    "brute_force_regime",
    "build_design",
    "concordance_split",
    "cost_matrix",
    "count_at",
    "empirical_value",
    "expand",
    "export_group_crfs",
    "fit_itr",
    "fit_propensity",
    "fit_smr",
    "fit_weighted_tree",
    "group_crf",
    "load_external_ps",
    "nelson_aalen",
    "parse_cohort",
    "predict_mean",
    "predict_ps",
    "pseudo_observations",
    "read_cohort",
    "render_tree",
    "serialize_cohort",
]
