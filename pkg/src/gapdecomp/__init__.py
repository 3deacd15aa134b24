"""Causal decomposition of group disparities under joint interventions
on a system-level and an individual-level factor.

The public surface: tabular data handling (`Dataset`, `RoleMap`,
`load_csv`), nuisance model specification (`ModelSpec`, `NuisanceSpecs`,
`FeatureFormula`, `GbtParams`), intervention description
(`InterventionSpec`, `Equalize`, `SetValue`, `NoChange`), the
estimation entry points (`run_analysis`, `bootstrap_analysis`,
`summarize`) and the simulation benchmark (`simlab`).
"""

from .crossfit import CrossFitPlan, audit_no_leakage, crossfit_nuisances, make_folds
from .decomposition import (ESTIMATORS, IMPUTATION, IMPUTE_WEIGHT, TRIPLY_ROBUST,
                            WEIGHTING, DisparityFit, EstimateRecord, decompose,
                            estimate_initial_disparity, estimate_single_factor,
                            format_pct, run_estimators)
from .gbt import GbtModel, GbtParams, fit_gbt, predict_gbt
from .glm import EstimationError, GlmFit, fit_linear, fit_logistic, predict_glm
from .inference import (AnalysisConfig, BootstrapResult, InferenceReport,
                        bootstrap_analysis, derive_seed, percentile_interval,
                        run_analysis, summarize)
from .models import (GBT_BINARY, GBT_REGRESS, LINEAR, LOGISTIC_GLM, FittedModel,
                     ModelSpec, fit_model, model_from_json, model_to_json,
                     predict_model)
from .nuisances import (Equalize, InterventionSpec, NoChange, NuisanceSet,
                        NuisanceSpecs, SetValue, fit_intervention_distributions,
                        fit_nuisances)
from .tabular import (DataError, Dataset, FeatureFormula, LoadReport, RoleMap,
                      build_design, cols, load_csv, write_csv)

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "BootstrapResult", "CrossFitPlan", "DataError", "Dataset",
    "DisparityFit", "ESTIMATORS", "Equalize", "EstimateRecord", "EstimationError",
    "FeatureFormula", "FittedModel", "GBT_BINARY", "GBT_REGRESS", "GbtModel",
    "GbtParams", "GlmFit", "IMPUTATION", "IMPUTE_WEIGHT", "InferenceReport",
    "InterventionSpec", "LINEAR", "LOGISTIC_GLM", "LoadReport", "ModelSpec",
    "NoChange", "NuisanceSet", "NuisanceSpecs", "RoleMap", "SetValue",
    "TRIPLY_ROBUST", "WEIGHTING", "audit_no_leakage", "bootstrap_analysis",
    "build_design", "cols", "crossfit_nuisances", "decompose", "derive_seed",
    "estimate_initial_disparity", "estimate_single_factor",
    "fit_gbt", "fit_intervention_distributions", "fit_linear", "fit_logistic",
    "fit_model", "fit_nuisances", "format_pct", "load_csv", "make_folds",
    "model_from_json", "model_to_json", "percentile_interval", "predict_gbt",
    "predict_glm", "predict_model", "run_analysis", "run_estimators", "summarize",
    "write_csv",
]
