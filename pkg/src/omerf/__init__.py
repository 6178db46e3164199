"""Ordinal mixed-effects random forests.

A regression random forest models the fixed component of an ordinal
response while a cumulative link mixed model carries the group-level
random effects; the two are fitted by alternation. Ships with the
parametric baselines (CLM, CLMM), an ordinal probability-forest
classifier, simulation scenarios, evaluation metrics and a batch CLI.
"""

from .clmm import (ClmFit, ClmmFit, FitError, RandomEffectsSpec, conditional_loglik,
                   conditional_loglik_grad, fit_clm, fit_clmm, icc,
                   inner_newton_modes, laplace_marginal_loglik)
from .core import (GroupedOrdinalDataset, Schema, ValidationError, build_dataset,
                   category_probs, clamp_prob, cumulative_probs, inv_logit,
                   load_dataset, logit)
from .estimator import (OmerfConfig, OmerfModel, OrdinalInitializer,
                        extract_random_effects, fit_omerf, init_latent,
                        predict_dataset, predict_omerf)
from .forest import (ForestConfig, RandomForest, fit_forest, partial_dependence,
                     permutation_importance)
from .metrics import (MetricsReport, accuracy, adjusted_rand_index, cohens_kappa,
                      evaluate, mse_ordinal)
from .sim import DgpSpec, SimulatedData, generate, latent_to_ordinal, sample_covariates

__version__ = "0.1.0"

__all__ = [
    "ClmFit", "ClmmFit", "DgpSpec", "FitError", "ForestConfig",
    "GroupedOrdinalDataset", "MetricsReport", "OmerfConfig", "OmerfModel",
    "OrdinalInitializer", "RandomEffectsSpec", "RandomForest", "Schema",
    "SimulatedData", "ValidationError", "accuracy", "adjusted_rand_index",
    "build_dataset", "category_probs", "clamp_prob", "cohens_kappa",
    "conditional_loglik", "conditional_loglik_grad", "cumulative_probs",
    "evaluate", "extract_random_effects", "fit_clm", "fit_clmm", "fit_forest",
    "fit_omerf", "generate", "icc", "init_latent", "inner_newton_modes",
    "inv_logit", "laplace_marginal_loglik", "latent_to_ordinal", "load_dataset",
    "logit", "mse_ordinal", "partial_dependence", "permutation_importance",
    "predict_dataset", "predict_omerf", "sample_covariates",
]
