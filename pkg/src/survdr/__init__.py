"""Doubly robust and weighted estimators of marginal causal effects on survival."""

from .errors import (
    BothExposuresRequired,
    ConfigError,
    DataError,
    EstimationError,
    EstimatorFailed,
    PositivityViolation,
    SurvdrError,
)
from .estimators import (
    EstimateWithCI,
    HazardRatioPipeline,
    SurvDiffPipeline,
    bootstrap,
    dr_binomial_regression,
    dr_pseudo_obs,
    dr_survival_curve,
    iptw,
    standardized_survdiff,
)
from .hazards import conditional_survival, fit_weighted_cox, fit_weighted_parametric_ph
from .nonparam import fit_censoring_model, ipcw_weights, jackknife_pseudo, kaplan_meier, reverse_kaplan_meier
from .survdata import Dataset, design_matrix, load_csv

__version__ = "0.1.0"
