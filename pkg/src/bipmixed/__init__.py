"""Bayesian integrative multi-view factor analysis with nested random effects.

Views share a low-rank latent factor with spike-and-slab selection of
components and features; the outcome adds family-within-site random
intercepts.  Inference is by MCMC, prediction by model averaging.
"""
from .baselines import PCA2StepModel, covariates_as_view, fit_bip, fit_pca2step
from .data import (
    HierarchyIndex,
    Hyperparameters,
    MultiViewDataset,
    Scaler,
    build_hierarchy,
    make_rng,
    scree_rank_suggestion,
    standardize_views,
)
from .errors import (
    BadDimension,
    BipMixedError,
    ConfigError,
    ConstantColumn,
    CrossSiteFamily,
    DimensionMismatch,
    EmptyInput,
    EmptyModel,
    LengthMismatch,
    SingularSystem,
    UndefinedRate,
    UnknownSite,
)
from .metrics import MetricsReport, auc, evaluate, mse, selection_rates, var_pred
from .prediction import estimate_loadings, estimate_u_new, predict, predict_bma, predict_single_model
from .sampler import ChainState, FittedModel, PosteriorSummary, fit, run_chain
from .simulation import ScenarioSpec, gen_dataset, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BadDimension", "BipMixedError", "ChainState", "ConfigError", "ConstantColumn", "CrossSiteFamily",
    "DimensionMismatch", "EmptyInput", "EmptyModel", "FittedModel", "HierarchyIndex", "Hyperparameters",
    "LengthMismatch", "MetricsReport", "MultiViewDataset", "PCA2StepModel", "PosteriorSummary", "Scaler",
    "ScenarioSpec", "SingularSystem", "UndefinedRate", "UnknownSite", "auc", "build_hierarchy",
    "covariates_as_view", "estimate_loadings", "estimate_u_new", "evaluate", "fit", "fit_bip",
    "fit_pca2step", "gen_dataset", "make_rng", "mse", "predict", "predict_bma", "predict_single_model",
    "run_chain", "run_scenario", "scree_rank_suggestion", "selection_rates", "standardize_views",
    "var_pred",
]
