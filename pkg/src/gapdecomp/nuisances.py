"""Intervention distributions and nuisance-model fitting.

The decomposition needs five fitted objects: the intervention
distribution of each target factor (what the reference group does, given
at most some allowable baseline covariates), the propensity of each
observed factor value, an outcome model, and a nested regression of the
intervention-averaged outcome predictions on everything that precedes
the system factor. This module fits them on explicit train/predict row
sets so the cross-fitting engine can reuse the exact same code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .glm import EstimationError
from .models import (FittedModel, LINEAR, GBT_REGRESS, ModelSpec, fit_model,
                     predict_model)
from .tabular import CATEGORICAL, DataError, Dataset, RoleMap
from . import glm

MARGINALIZE = "marginalize"
DRAW = "draw"

PLUGIN_OBSERVED = "observed"     # averaged outcome keeps the observed system factor
PLUGIN_INTERVENED = "intervened"  # literal plug-in of the intervened system factor


@dataclass(frozen=True)
class Equalize:
    """Give the factor the reference group's distribution, conditionally
    on the listed allowable baseline covariates (none by default)."""
    allowables: tuple = ()


@dataclass(frozen=True)
class SetValue:
    """Force the factor to a fixed level (0 or 1) for everyone."""
    level: int


@dataclass(frozen=True)
class NoChange:
    """Leave the factor at its observed value."""


@dataclass(frozen=True)
class InterventionSpec:
    sys: object = Equalize()
    ind: object = Equalize()
    integration: str = MARGINALIZE
    n_draws: int = 0
    seed: int = 0
    sys_plugin: str = PLUGIN_INTERVENED

    def validate(self, roles: RoleMap) -> None:
        for fac in (self.sys, self.ind):
            if isinstance(fac, Equalize):
                for c in fac.allowables:
                    if c not in roles.baseline:
                        raise DataError(
                            f"allowable covariate {c!r} must be listed as baseline")
            elif isinstance(fac, SetValue):
                if fac.level not in (0, 1):
                    raise DataError("SetValue level must be 0 or 1")
            elif not isinstance(fac, NoChange):
                raise DataError(f"unknown intervention mode {fac!r}")
        if self.integration not in (MARGINALIZE, DRAW):
            raise DataError(f"unknown integration mode {self.integration!r}")
        if self.integration == DRAW and self.n_draws < 1:
            raise DataError("draw integration needs n_draws >= 1")
        if self.sys_plugin not in (PLUGIN_OBSERVED, PLUGIN_INTERVENED):
            raise DataError(f"unknown sys_plugin {self.sys_plugin!r}")


def _group_indicators(ds: Dataset, roles: RoleMap):
    ref = roles.reference_level(ds)
    levels = [l for l in ds.column_levels(roles.group) if l != ref]
    g = ds.data[roles.group]
    return [(g == l).astype(np.float64) for l in levels], levels


def _allowable_vectors(ds: Dataset, allowables):
    vecs, names = [], []
    for c in allowables:
        if ds.kinds[c] == CATEGORICAL:
            for l in ds.levels[c][1:]:
                vecs.append((ds.data[c] == l).astype(np.float64))
                names.append(f"{c}={l}")
        else:
            vecs.append(ds.data[c])
            names.append(c)
    return vecs, names


@dataclass
class InterventionFit:
    p_sys_star: np.ndarray   # per-unit intervention P(sys factor = 1)
    p_ind_star: np.ndarray
    models: dict
    point_mass_sys: bool
    point_mass_ind: bool


def _fit_equalize(ds: Dataset, roles: RoleMap, factor_col: str, allowables):
    """Logistic fit of the factor on group indicators, allowables and their
    products, evaluated with the group forced to the reference level.

    With a single binary allowable this design is saturated in (group,
    allowable), so the per-unit values are reference-group stratum
    proportions; with no allowables they are the reference proportion.
    """
    gvecs, glv = _group_indicators(ds, roles)
    avecs, anames = _allowable_vectors(ds, allowables)
    cols = [np.ones(ds.n)] + gvecs + avecs
    names = ["const"] + [f"group={l}" for l in glv] + anames
    for gi, gl in zip(gvecs, glv):
        for av, an in zip(avecs, anames):
            cols.append(gi * av)
            names.append(f"group={gl}:{an}")
    X = np.column_stack(cols)
    fit = glm.fit_logistic(X, ds.numeric(factor_col), names)
    Xref = X.copy()
    ngroup = len(gvecs)
    Xref[:, 1:1 + ngroup] = 0.0
    Xref[:, 1 + ngroup + len(avecs):] = 0.0
    return glm.predict_glm(fit, Xref), fit


def fit_intervention_distributions(ds: Dataset, roles: RoleMap,
                                   intervention: InterventionSpec) -> InterventionFit:
    intervention.validate(roles)
    out, models, point = {}, {}, {}
    for key, mode, col in (("sys", intervention.sys, roles.system_factor),
                           ("ind", intervention.ind, roles.individual_factor)):
        if isinstance(mode, SetValue):
            out[key] = np.full(ds.n, float(mode.level))
            models[key] = None
            point[key] = True
        elif isinstance(mode, NoChange):
            out[key] = None   # filled with fitted propensities downstream
            models[key] = None
            point[key] = False
        else:
            out[key], models[key] = _fit_equalize(ds, roles, col, mode.allowables)
            point[key] = False
    return InterventionFit(out["sys"], out["ind"], models,
                           point["sys"], point["ind"])


@dataclass(frozen=True)
class NuisanceSpecs:
    prop_sys: ModelSpec
    prop_ind: ModelSpec
    outcome: ModelSpec
    nested: ModelSpec

    def validate(self) -> None:
        for name, spec in (("prop_sys", self.prop_sys), ("prop_ind", self.prop_ind)):
            spec.validate()
            if not spec.is_classifier():
                raise DataError(f"{name} must be a classifier family")
        self.outcome.validate()
        self.nested.validate()
        if self.outcome.is_classifier() or self.nested.is_classifier():
            raise DataError("outcome and nested models must be regression families")
        if self.outcome.is_gbt() != self.nested.is_gbt():
            raise DataError("nested model family must mirror the outcome model family")


@dataclass
class NuisanceSet:
    """Per-unit nuisance values, aligned with the dataset rows.

    Probability fields hold intervention probabilities of factor level 1
    (p_*_star) and fitted propensities of the observed values (p_*_obs).
    y_* fields are outcome-model predictions; nested_* come from the
    nested regression. *_bar fields are integrated over the intervention
    distributions (analytically, or by Monte Carlo in draw mode).
    """

    n: int
    p_sys_star: np.ndarray
    p_ind_star: np.ndarray
    p_sys_obs: np.ndarray
    p_ind_obs: np.ndarray
    y_hat: np.ndarray
    y_ind0: np.ndarray
    y_ind1: np.ndarray
    y_bar: np.ndarray
    nested_obs: np.ndarray
    nested_sys0: np.ndarray
    nested_sys1: np.ndarray
    nested_bar: np.ndarray
    y_bar_star: np.ndarray = None   # only under the intervened plug-in variant
    provenance: str = "in_sample"
    plugin: str = PLUGIN_OBSERVED
    fold_of_row: np.ndarray = None
    train_rows_by_fold: dict = None
    point_mass_sys: bool = False
    point_mass_ind: bool = False
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)

    def star_of_observed(self, which: str, observed: np.ndarray) -> np.ndarray:
        """Intervention probability of each unit's observed factor value."""
        star = self.p_sys_star if which == "sys" else self.p_ind_star
        return np.where(observed == 1.0, star, 1.0 - star)

    def propensity_range(self) -> dict:
        return {
            "p_sys_obs_min": float(self.p_sys_obs.min()),
            "p_sys_obs_max": float(self.p_sys_obs.max()),
            "p_ind_obs_min": float(self.p_ind_obs.min()),
            "p_ind_obs_max": float(self.p_ind_obs.max()),
        }


def _integrate(p1, at0, at1, mode, n_draws, rng):
    """Average predictions over a Bernoulli(p1) factor draw."""
    if mode == MARGINALIZE:
        return (1.0 - p1) * at0 + p1 * at1
    acc = np.zeros_like(at0)
    for _ in range(n_draws):
        take = rng.random(p1.shape[0]) < p1
        acc += np.where(take, at1, at0)
    return acc / n_draws


def _rng_for(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _effective_plugin(intervention: InterventionSpec) -> str:
    """The plug-in form actually used for the nested stage.

    The fully intervened plug-in integrates the outcome model over both
    star distributions inside the nested target. That form assumes the
    individual factor is itself intervened on; when it is left unchanged
    the observed-value path is the correct nested recipe, so the request
    is downgraded to it.
    """
    if isinstance(intervention.ind, NoChange):
        return PLUGIN_OBSERVED
    return intervention.sys_plugin


def fit_nuisance_block(ds: Dataset, roles: RoleMap, intervention: InterventionSpec,
                       specs: NuisanceSpecs, int_fit: InterventionFit,
                       train_rows, pred_rows, fold_id: int = 0):
    """Fit all four nuisance models on train_rows, predict on pred_rows.

    The nested stage regresses the intervention-averaged outcome
    predictions of the *training* rows (made by the outcome model fitted
    on those same training rows) on the pre-system-factor covariates, so
    no information from pred_rows ever enters a model that scores them.
    Returns a dict of arrays aligned with pred_rows plus the fitted models.
    """
    sys_col = roles.system_factor
    ind_col = roles.individual_factor
    y = ds.numeric(roles.outcome)
    sys_obs = ds.numeric(sys_col)
    ind_obs = ds.numeric(ind_col)
    train_rows = np.asarray(train_rows)
    pred_rows = np.asarray(pred_rows)
    draw = intervention.integration == DRAW
    rng = _rng_for(intervention.seed, fold_id) if draw else None

    m_psys = fit_model(ds, specs.prop_sys, sys_obs, train_rows)
    p_sys1 = predict_model(m_psys, ds, pred_rows)
    m_pind = fit_model(ds, specs.prop_ind, ind_obs, train_rows)
    p_ind1 = predict_model(m_pind, ds, pred_rows)

    m_out = fit_model(ds, specs.outcome, y, train_rows)
    ds_i0 = ds.with_columns({ind_col: 0.0})
    ds_i1 = ds.with_columns({ind_col: 1.0})

    def ind_integrated(rows, rows_rng):
        """Outcome predictions averaged over the individual-factor intervention."""
        if isinstance(intervention.ind, NoChange):
            return predict_model(m_out, ds, rows), None, None
        a0 = predict_model(m_out, ds_i0, rows)
        a1 = predict_model(m_out, ds_i1, rows)
        p1 = int_fit.p_ind_star[rows]
        return _integrate(p1, a0, a1, intervention.integration,
                          intervention.n_draws, rows_rng), a0, a1

    def both_integrated(rows, rows_rng):
        """Predictions averaged over both intervention distributions."""
        corners = {}
        for s in (0.0, 1.0):
            for i in (0.0, 1.0):
                dsc = ds.with_columns({sys_col: s, ind_col: i})
                corners[(s, i)] = predict_model(m_out, dsc, rows)
        # a factor left unchanged keeps its observed value, which is a point
        # mass, so the observed indicator stands in for the star distribution
        if int_fit.p_sys_star is None:
            ps = sys_obs[rows]
        else:
            ps = int_fit.p_sys_star[rows]
        if int_fit.p_ind_star is None:
            pi = ind_obs[rows]
        else:
            pi = int_fit.p_ind_star[rows]
        if intervention.integration == MARGINALIZE:
            return ((1 - ps) * (1 - pi) * corners[(0.0, 0.0)]
                    + (1 - ps) * pi * corners[(0.0, 1.0)]
                    + ps * (1 - pi) * corners[(1.0, 0.0)]
                    + ps * pi * corners[(1.0, 1.0)])
        acc = np.zeros(rows.shape[0])
        for _ in range(intervention.n_draws):
            ts = rows_rng.random(rows.shape[0]) < ps
            ti = rows_rng.random(rows.shape[0]) < pi
            acc += np.where(ts, np.where(ti, corners[(1.0, 1.0)], corners[(1.0, 0.0)]),
                            np.where(ti, corners[(0.0, 1.0)], corners[(0.0, 0.0)]))
        return acc / intervention.n_draws

    intervened_plugin = _effective_plugin(intervention) == PLUGIN_INTERVENED
    if intervened_plugin:
        nested_target = both_integrated(train_rows, rng)
    else:
        nested_target, _, _ = ind_integrated(train_rows, rng)

    nested_spec = specs.nested
    target_full = np.zeros(ds.n)
    target_full[train_rows] = nested_target
    m_nested = fit_model(ds, nested_spec, target_full, train_rows)

    y_hat = predict_model(m_out, ds, pred_rows)
    y_bar, y_i0, y_i1 = ind_integrated(pred_rows, rng)
    if y_i0 is None:
        y_i0 = predict_model(m_out, ds_i0, pred_rows)
        y_i1 = predict_model(m_out, ds_i1, pred_rows)
    y_bar_star = both_integrated(pred_rows, rng) if intervened_plugin else None

    nested_obs = predict_model(m_nested, ds, pred_rows)
    nested_s0 = predict_model(m_nested, ds.with_columns({sys_col: 0.0}), pred_rows)
    nested_s1 = predict_model(m_nested, ds.with_columns({sys_col: 1.0}), pred_rows)
    if isinstance(intervention.sys, NoChange):
        nested_bar = nested_obs
    else:
        nested_bar = _integrate(int_fit.p_sys_star[pred_rows], nested_s0, nested_s1,
                                intervention.integration, intervention.n_draws, rng)

    models = {"prop_sys": m_psys, "prop_ind": m_pind,
              "outcome": m_out, "nested": m_nested}
    arrays = {
        "p_sys_1": p_sys1,
        "p_ind_1": p_ind1,
        "p_sys_obs": np.where(sys_obs[pred_rows] == 1.0, p_sys1, 1.0 - p_sys1),
        "p_ind_obs": np.where(ind_obs[pred_rows] == 1.0, p_ind1, 1.0 - p_ind1),
        "y_hat": y_hat,
        "y_ind0": y_i0,
        "y_ind1": y_i1,
        "y_bar": y_bar,
        "y_bar_star": y_bar_star,
        "nested_obs": nested_obs,
        "nested_sys0": nested_s0,
        "nested_sys1": nested_s1,
        "nested_bar": nested_bar,
    }
    return arrays, models


def _assemble(ds, roles, intervention, int_fit, blocks, provenance,
              fold_of_row=None, train_rows_by_fold=None, model_diags=None) -> NuisanceSet:
    """Stitch per-block prediction arrays (aligned to row subsets) into one set."""
    n = ds.n
    keys = ["p_sys_1", "p_ind_1", "p_sys_obs", "p_ind_obs", "y_hat", "y_ind0",
            "y_ind1", "y_bar", "y_bar_star", "nested_obs", "nested_sys0",
            "nested_sys1", "nested_bar"]
    full = {}
    want_star = _effective_plugin(intervention) == PLUGIN_INTERVENED
    for k in keys:
        if k == "y_bar_star" and not want_star:
            full[k] = None
            continue
        arr = np.zeros(n)
        for rows, arrays in blocks:
            arr[rows] = arrays[k]
        full[k] = arr

    p_sys_star = int_fit.p_sys_star if int_fit.p_sys_star is not None else full["p_sys_1"]
    p_ind_star = int_fit.p_ind_star if int_fit.p_ind_star is not None else full["p_ind_1"]

    degenerate = any(m is not None and m.degenerate
                     for m in int_fit.models.values())
    diags = {"intervention": {k: (m.diagnostics() if m is not None else None)
                              for k, m in int_fit.models.items()},
             "models": model_diags or {}}
    for per_fold in (model_diags or {}).values():
        for d in per_fold:
            if d.get("degenerate"):
                degenerate = True

    nuis = NuisanceSet(
        n=n,
        p_sys_star=p_sys_star,
        p_ind_star=p_ind_star,
        p_sys_obs=full["p_sys_obs"],
        p_ind_obs=full["p_ind_obs"],
        y_hat=full["y_hat"],
        y_ind0=full["y_ind0"],
        y_ind1=full["y_ind1"],
        y_bar=full["y_bar"],
        nested_obs=full["nested_obs"],
        nested_sys0=full["nested_sys0"],
        nested_sys1=full["nested_sys1"],
        nested_bar=full["nested_bar"],
        y_bar_star=full["y_bar_star"],
        provenance=provenance,
        plugin=_effective_plugin(intervention),
        fold_of_row=fold_of_row,
        train_rows_by_fold=train_rows_by_fold,
        point_mass_sys=int_fit.point_mass_sys,
        point_mass_ind=int_fit.point_mass_ind,
        degenerate=degenerate,
        diagnostics=diags,
    )
    nuis.diagnostics["propensities"] = nuis.propensity_range()
    return nuis


def fit_nuisances(ds: Dataset, roles: RoleMap, intervention: InterventionSpec,
                  specs: NuisanceSpecs) -> NuisanceSet:
    """Plain in-sample nuisance fitting (no cross-fitting)."""
    roles.validate(ds)
    specs.validate()
    int_fit = fit_intervention_distributions(ds, roles, intervention)
    all_rows = np.arange(ds.n)
    arrays, models = fit_nuisance_block(ds, roles, intervention, specs,
                                        int_fit, all_rows, all_rows)
    diags = {k: [m.diagnostics()] for k, m in models.items()}
    return _assemble(ds, roles, intervention, int_fit, [(all_rows, arrays)],
                     "in_sample", model_diags=diags)
