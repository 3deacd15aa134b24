"""Model specification and a uniform fit/predict facade.

A ModelSpec names a family, a feature formula and (for boosted trees)
the boosting parameters. fit_model/predict_model hide the family split
from the rest of the pipeline. Fitted models serialize to JSON and
reload to bit-identical predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .gbt import GbtModel, GbtParams, fit_gbt, gbt_from_json_obj, gbt_to_json_obj, predict_gbt
from .glm import EstimationError, GlmFit
from .tabular import DataError, Dataset, FeatureFormula, build_design

LINEAR = "linear"
LOGISTIC_GLM = "logistic"
GBT_REGRESS = "gbt_regress"
GBT_BINARY = "gbt_binary"
FAMILIES = (LINEAR, LOGISTIC_GLM, GBT_REGRESS, GBT_BINARY)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    formula: FeatureFormula
    gbt: GbtParams = None
    seed: int = 0

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}")
        self.formula.validate()
        if self.family in (GBT_REGRESS, GBT_BINARY):
            if self.formula.intercept:
                raise DataError("gbt models take raw feature columns, no intercept")
        elif self.gbt is not None:
            raise DataError("gbt parameters given for a non-gbt family")

    def is_classifier(self) -> bool:
        return self.family in (LOGISTIC_GLM, GBT_BINARY)

    def is_gbt(self) -> bool:
        return self.family in (GBT_REGRESS, GBT_BINARY)

    def mirrored_regressor(self, formula: FeatureFormula) -> "ModelSpec":
        """Regression-family sibling with a different formula.

        Used for the nested stage, whose family follows the outcome
        model's family (linear <-> linear, gbt <-> gbt).
        """
        fam = GBT_REGRESS if self.is_gbt() else LINEAR
        return ModelSpec(fam, formula, self.gbt if self.is_gbt() else None, self.seed)

    def to_json_obj(self) -> dict:
        obj = {"family": self.family, "formula": self.formula.to_json_obj(), "seed": self.seed}
        if self.gbt is not None:
            obj["gbt"] = {
                "n_trees": self.gbt.n_trees,
                "learning_rate": self.gbt.learning_rate,
                "max_depth": self.gbt.max_depth,
                "min_child_weight": self.gbt.min_child_weight,
                "l2_lambda": self.gbt.l2_lambda,
                "subsample": self.gbt.subsample,
            }
        return obj

    @staticmethod
    def from_json_obj(obj) -> "ModelSpec":
        gbt = GbtParams(**obj["gbt"]) if "gbt" in obj else None
        spec = ModelSpec(obj["family"], FeatureFormula.from_json_obj(obj["formula"]),
                         gbt, int(obj.get("seed", 0)))
        spec.validate()
        return spec


@dataclass
class FittedModel:
    spec: ModelSpec
    colnames: list
    glm_fit: GlmFit = None
    gbt_fit: GbtModel = None

    def diagnostics(self) -> dict:
        if self.glm_fit is not None:
            return self.glm_fit.diagnostics()
        return {
            "family": self.spec.family,
            "n_trees": len(self.gbt_fit.trees),
            "final_loss": self.gbt_fit.loss_trace[-1] if self.gbt_fit.loss_trace else None,
        }

    @property
    def degenerate(self) -> bool:
        return bool(self.glm_fit is not None and self.glm_fit.degenerate)


def fit_model(ds: Dataset, spec: ModelSpec, y: np.ndarray, rows=None) -> FittedModel:
    """Fit spec on the given rows (all rows when rows is None)."""
    spec.validate()
    sub = ds if rows is None else ds.subset(rows)
    yy = np.asarray(y, dtype=np.float64)
    if rows is not None:
        yy = yy[np.asarray(rows)]
    X, names = build_design(sub, spec.formula)
    if spec.family == LINEAR:
        return FittedModel(spec, names, glm_fit=glm.fit_linear(X, yy, names))
    if spec.family == LOGISTIC_GLM:
        return FittedModel(spec, names, glm_fit=glm.fit_logistic(X, yy, names))
    objective = "logistic" if spec.family == GBT_BINARY else "squared"
    params = spec.gbt or GbtParams()
    return FittedModel(spec, names, gbt_fit=fit_gbt(X, yy, objective, params, spec.seed))


def predict_model(model: FittedModel, ds: Dataset, rows=None) -> np.ndarray:
    """Response-scale predictions from the model's own formula."""
    sub = ds if rows is None else ds.subset(rows)
    X, _ = build_design(sub, model.spec.formula)
    if model.glm_fit is not None:
        return glm.predict_glm(model.glm_fit, X)
    return predict_gbt(model.gbt_fit, X)


def model_to_json(model: FittedModel) -> str:
    obj = {"spec": model.spec.to_json_obj(), "colnames": model.colnames}
    if model.glm_fit is not None:
        f = model.glm_fit
        obj["glm"] = {
            "family": f.family,
            "coef": f.coef.tolist(),
            "iterations": f.iterations,
            "deviance": f.deviance,
            "converged": f.converged,
            "ridged": f.ridged,
            "degenerate": f.degenerate,
            "fixed_response": f.fixed_response,
        }
    else:
        obj["gbt"] = gbt_to_json_obj(model.gbt_fit)
    return json.dumps(obj, sort_keys=True)


def model_from_json(text: str) -> FittedModel:
    obj = json.loads(text)
    spec = ModelSpec.from_json_obj(obj["spec"])
    model = FittedModel(spec, list(obj["colnames"]))
    if "glm" in obj:
        g = obj["glm"]
        model.glm_fit = GlmFit(g["family"], np.asarray(g["coef"], dtype=np.float64),
                               list(obj["colnames"]), iterations=g["iterations"],
                               deviance=g["deviance"], converged=g["converged"],
                               ridged=g["ridged"], degenerate=g["degenerate"],
                               fixed_response=g["fixed_response"])
    else:
        model.gbt_fit = gbt_from_json_obj(obj["gbt"])
    return model
