"""Debiased estimation of the mediation functional with high-dimensional covariates and mediators."""

from .data import Dataset, SplitPlan, TrueParams, split, validate
from .effects import bootstrap_effects, counterfactual_mean, effects
from .pipeline import (MediationEstimate, PipelineConfig, estimate_crossfit, estimate_debiased, estimate_naive,
                       bias_diagnostic)

__version__ = "0.1.0"

__all__ = ["Dataset", "SplitPlan", "TrueParams", "split", "validate", "MediationEstimate", "PipelineConfig",
           "estimate_debiased", "estimate_naive", "estimate_crossfit", "bias_diagnostic", "effects",
           "counterfactual_mean", "bootstrap_effects", "__version__"]
