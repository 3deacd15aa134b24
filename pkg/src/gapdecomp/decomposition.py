"""Disparity decomposition estimators.

The object of interest is the counterfactual mean of the outcome in each
comparison group when both target factors are drawn from the reference
group's (allowable-conditional) distributions, the system-level factor
first, then the individual-level factor given everything the system
factor has already influenced. Four estimators are provided:

  imputation        mean of the intervention-averaged nested regression
  weighting         ratio-of-distributions reweighting of raw outcomes
  impute_weight     system-factor weight applied to the individual-factor
                    averaged outcome model
  triply_robust     imputation plus two weighted correction terms; it is
                    consistent when (a) both outcome-side models, or
                    (b) the system propensity and outcome model, or
                    (c) both propensities are correctly specified.

The initial disparity is a covariate-adjusted group contrast from a
linear regression of the outcome on group indicators and mean-centered
baseline covariates; reduction and remaining components are defined
against the adjusted means so they add up to the disparity exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import glm
from .glm import EstimationError
from .nuisances import NuisanceSet
from .tabular import CATEGORICAL, DataError, Dataset, RoleMap

IMPUTATION = "imputation"
WEIGHTING = "weighting"
IMPUTE_WEIGHT = "impute_weight"
TRIPLY_ROBUST = "triply_robust"
ESTIMATORS = (IMPUTATION, WEIGHTING, IMPUTE_WEIGHT, TRIPLY_ROBUST)

POSITIVITY_WARN = 0.01


@dataclass
class DisparityFit:
    """Adjusted group means and contrasts from the outcome~group+baseline fit."""
    adjusted_means: dict          # group level -> adjusted mean at grand-mean baseline
    disparity: dict               # comparison level -> contrast vs reference
    reference: object
    coef: np.ndarray
    colnames: list


def stratum_mask(ds: Dataset, stratum) -> np.ndarray:
    """Row mask for a (column, level) reporting cell."""
    col, level = stratum
    if col not in ds.columns:
        raise DataError(f"stratum column {col!r} not in dataset")
    mask = ds.data[col] == level
    if not mask.any():
        raise DataError(f"no rows with {col!r} == {level!r}")
    return mask


def estimate_initial_disparity(ds: Dataset, roles: RoleMap,
                               stratum: tuple = None) -> DisparityFit:
    """Adjusted mean outcome per group at grand-mean baseline covariates.

    With no baseline covariates this reduces to raw group means and raw
    mean differences. A (column, level) stratum restricts the fit to that
    reporting cell; the stratum column, being constant there, is dropped
    from the baseline list.
    """
    if stratum is not None:
        ds = ds.subset(stratum_mask(ds, stratum))
        if stratum[0] in roles.baseline:
            roles = replace(roles, baseline=tuple(
                b for b in roles.baseline if b != stratum[0]))
    roles.validate(ds)
    ref = roles.reference_level(ds)
    comparisons = roles.comparison_levels(ds)
    y = ds.numeric(roles.outcome)
    covs, names = [np.ones(ds.n)], ["const"]
    for lv in comparisons:
        covs.append((ds.data[roles.group] == lv).astype(np.float64))
        names.append(f"group={lv}")
    for c in roles.baseline:
        if ds.kinds[c] == CATEGORICAL:
            for l in ds.levels[c][1:]:
                v = (ds.data[c] == l).astype(np.float64)
                covs.append(v - v.mean())
                names.append(f"center({c}={l})")
        else:
            v = ds.numeric(c)
            covs.append(v - v.mean())
            names.append(f"center({c})")
    X = np.column_stack(covs)
    fit = glm.fit_linear(X, y, names)
    beta = fit.coef
    means = {ref: float(beta[0])}
    tau = {}
    for j, lv in enumerate(comparisons, start=1):
        means[lv] = float(beta[0] + beta[j])
        tau[lv] = float(beta[j])
    return DisparityFit(means, tau, ref, beta, names)


def _group_rows(ds, roles, level, stratum=None):
    mask = roles.group_mask(ds, level)
    if stratum is not None:
        mask = mask & stratum_mask(ds, stratum)
    if not mask.any():
        where = f" in stratum {stratum!r}" if stratum is not None else ""
        raise EstimationError(f"no rows for group level {level!r}{where}")
    return mask


def estimate_imputation(ds: Dataset, roles: RoleMap, nuis: NuisanceSet,
                        stratum: tuple = None) -> dict:
    """Counterfactual mean per comparison group from the nested regression."""
    out = {}
    for lv in roles.comparison_levels(ds):
        mask = _group_rows(ds, roles, lv, stratum)
        out[lv] = float(nuis.nested_bar[mask].mean())
    return out


@dataclass
class WeightReport:
    normalized: bool
    trim: tuple = None            # (low_pct, high_pct) or None
    n_trimmed: dict = field(default_factory=dict)
    weight_min: dict = field(default_factory=dict)
    weight_max: dict = field(default_factory=dict)


def _ratio_weights(ds, roles, nuis):
    sys_obs = ds.numeric(roles.system_factor)
    ind_obs = ds.numeric(roles.individual_factor)
    num = nuis.star_of_observed("sys", sys_obs) * nuis.star_of_observed("ind", ind_obs)
    return num / (nuis.p_sys_obs * nuis.p_ind_obs)


def estimate_weighting(ds: Dataset, roles: RoleMap, nuis: NuisanceSet,
                       normalize: bool = False, trim: tuple = None,
                       stratum: tuple = None):
    """Weighted-outcome counterfactual means.

    Weights are the product of the two intervention-over-propensity
    ratios at the observed factor values. Unnormalized means by default;
    normalize=True rescales by the weight mean within the group. trim
    winsorizes weights at the given (low, high) percentiles within each
    comparison group before averaging and reports how many were capped.
    """
    y = ds.numeric(roles.outcome)
    w_all = _ratio_weights(ds, roles, nuis)
    report = WeightReport(normalized=normalize, trim=trim)
    out = {}
    for lv in roles.comparison_levels(ds):
        mask = _group_rows(ds, roles, lv, stratum)
        w = w_all[mask].copy()
        if trim is not None:
            lo, hi = np.percentile(w, [trim[0], trim[1]])
            capped = (w < lo) | (w > hi)
            report.n_trimmed[lv] = int(capped.sum())
            w = np.clip(w, lo, hi)
        else:
            report.n_trimmed[lv] = 0
        report.weight_min[lv] = float(w.min())
        report.weight_max[lv] = float(w.max())
        wy = w * y[mask]
        out[lv] = float(wy.sum() / w.sum()) if normalize else float(wy.mean())
    return out, report


def estimate_impute_weight(ds: Dataset, roles: RoleMap, nuis: NuisanceSet,
                           stratum: tuple = None) -> dict:
    """System-factor weight times the individual-factor averaged outcome model."""
    sys_obs = ds.numeric(roles.system_factor)
    rw_sys = nuis.star_of_observed("sys", sys_obs) / nuis.p_sys_obs
    out = {}
    for lv in roles.comparison_levels(ds):
        mask = _group_rows(ds, roles, lv, stratum)
        out[lv] = float((rw_sys[mask] * nuis.y_bar[mask]).mean())
    return out


def estimate_triply_robust(ds: Dataset, roles: RoleMap, nuis: NuisanceSet,
                           stratum: tuple = None) -> dict:
    """Nested mean plus system-weighted and doubly weighted corrections.

    By default the middle term contrasts the fully intervened outcome
    average with the intervened nested prediction, the literal plug-in
    form; the system-factor weight performs the system intervention.
    Under the observed plug-in variant the contrast instead pairs the
    individual-factor averaged outcome model with the nested prediction
    at the observed system factor, which centers the correction exactly
    when the outcome-side models are the fitted ones.
    """
    y = ds.numeric(roles.outcome)
    sys_obs = ds.numeric(roles.system_factor)
    rw_sys = nuis.star_of_observed("sys", sys_obs) / nuis.p_sys_obs
    w_both = _ratio_weights(ds, roles, nuis)
    if nuis.plugin == "intervened":
        middle = nuis.y_bar_star - nuis.nested_bar
    else:
        middle = nuis.y_bar - nuis.nested_obs
    summand = nuis.nested_bar + rw_sys * middle + w_both * (y - nuis.y_hat)
    out = {}
    for lv in roles.comparison_levels(ds):
        mask = _group_rows(ds, roles, lv, stratum)
        out[lv] = float(summand[mask].mean())
    return out


def estimate_single_factor(ds: Dataset, roles: RoleMap, nuis: NuisanceSet,
                           factor: str, stratum: tuple = None) -> dict:
    """Counterfactual mean when only one factor is intervened on.

    factor="ind": mean of the outcome model averaged over the
    individual-factor intervention at observed upstream values.
    factor="sys": the nested-regression path. The NuisanceSet must have
    been fitted with the other factor left unchanged.
    """
    if factor not in ("sys", "ind"):
        raise DataError(f"factor must be 'sys' or 'ind', got {factor!r}")
    src = nuis.nested_bar if factor == "sys" else nuis.y_bar
    out = {}
    for lv in roles.comparison_levels(ds):
        mask = _group_rows(ds, roles, lv, stratum)
        out[lv] = float(src[mask].mean())
    return out


@dataclass
class EstimateRecord:
    group_level: object
    estimator: str
    disparity: float       # adjusted contrast vs the reference group
    cf_mean: float         # counterfactual mean under the intervention
    reduction: float       # adjusted group mean minus cf_mean
    remaining: float       # cf_mean minus adjusted reference mean
    pct_reduction: float   # reduction / disparity * 100 (None when disparity == 0)
    normalized: bool = False
    trim: tuple = None
    n_trimmed: int = 0
    prop_min: float = float("nan")
    prop_max: float = float("nan")
    positivity_warning: bool = False

    def identity_gap(self) -> float:
        return abs(self.disparity - (self.reduction + self.remaining))


def decompose(disparity: DisparityFit, cf_means: dict, estimator: str,
              nuis: NuisanceSet = None, weight_report: WeightReport = None) -> list:
    """Combine adjusted means and counterfactual means into records.

    reduction_r = adjusted mean_r - cf_mean_r, remaining_r = cf_mean_r -
    adjusted reference mean; the two add up to the disparity contrast
    exactly by construction.
    """
    records = []
    ref_mean = disparity.adjusted_means[disparity.reference]
    prange = nuis.propensity_range() if nuis is not None else None
    for lv, tau in disparity.disparity.items():
        psi = cf_means[lv]
        delta = disparity.adjusted_means[lv] - psi
        zeta = psi - ref_mean
        pct = None if tau == 0.0 else delta / tau * 100.0
        rec = EstimateRecord(lv, estimator, tau, psi, delta, zeta, pct)
        if weight_report is not None:
            rec.normalized = weight_report.normalized
            rec.trim = weight_report.trim
            rec.n_trimmed = weight_report.n_trimmed.get(lv, 0)
        if prange is not None:
            rec.prop_min = min(prange["p_sys_obs_min"], prange["p_ind_obs_min"])
            rec.prop_max = max(prange["p_sys_obs_max"], prange["p_ind_obs_max"])
            rec.positivity_warning = rec.prop_min < POSITIVITY_WARN
        records.append(rec)
    return records


def format_pct(pct: float, decimals: int = 2) -> str:
    """Render a percent-reduction for report tables.

    The value is reported at two-decimal precision; coarser displays
    truncate that two-decimal figure toward zero rather than re-rounding
    (so 29.95 prints as "29.9" at one decimal, not "30.0").
    """
    if pct is None:
        return ""
    q = round(pct, 2)
    if decimals >= 2:
        return f"{q:.{decimals}f}%"
    factor = 10 ** decimals
    return f"{math.trunc(q * factor) / factor:.{decimals}f}%"


def run_estimators(ds: Dataset, roles: RoleMap, nuis: NuisanceSet, estimators,
                   normalize: bool = False, trim: tuple = None,
                   stratum: tuple = None):
    """Evaluate the requested estimators; returns {name: {level: cf_mean}}
    plus the weighting report when weighting ran."""
    cf, wreport = {}, None
    for name in estimators:
        if name == IMPUTATION:
            cf[name] = estimate_imputation(ds, roles, nuis, stratum)
        elif name == WEIGHTING:
            cf[name], wreport = estimate_weighting(ds, roles, nuis,
                                                   normalize=normalize, trim=trim,
                                                   stratum=stratum)
        elif name == IMPUTE_WEIGHT:
            cf[name] = estimate_impute_weight(ds, roles, nuis, stratum)
        elif name == TRIPLY_ROBUST:
            cf[name] = estimate_triply_robust(ds, roles, nuis, stratum)
        else:
            raise DataError(f"unknown estimator {name!r}")
    return cf, wreport
