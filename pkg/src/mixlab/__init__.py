"""Finite and nonparametric mixture models with penalized likelihood."""

from .checks import CheckReport
from .errors import (
    ComponentDeathError,
    ContractViolation,
    DegenerateInputError,
    DomainError,
    FitFailureError,
    MixlabError,
    UnderdeterminedError,
)
from .estimators import FitConfig, FitReport, NPMLEResult, e_step, em_fit, m_step, npmle_fit
from .experiments import ExperimentConfig, ReplicationResult, run_consistency, run_degeneracy_comparison
from .metrics import KWDistanceResult, kw_distance
from .model import (
    ComponentFamily,
    EmpiricalCDF,
    MixingDistribution,
    ParamPoint,
    Sample,
    canonicalize,
    cdf_window_sup,
    component_density,
    component_logpdf,
    log_likelihood,
    mixing,
    mixture_density,
    mixture_logpdf,
    sample_mixture,
)
from .penalty import PenaltyConfig, PenaltyReport, penalty_component, penalty_total, validate_penalty_properties

__version__ = "0.1.0"
