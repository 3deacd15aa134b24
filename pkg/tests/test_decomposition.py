import numpy as np
import pytest

import toypop
from gapdecomp.decomposition import (ESTIMATORS,
                                     estimate_initial_disparity,
                                     estimate_single_factor,
                                     estimate_weighting, decompose,
                                     format_pct, run_estimators)
from gapdecomp.models import LINEAR, LOGISTIC_GLM, ModelSpec
from gapdecomp.nuisances import (PLUGIN_OBSERVED, Equalize, InterventionSpec,
                                 NoChange, NuisanceSpecs, fit_nuisances)
from gapdecomp.tabular import DataError, Dataset, FeatureFormula, RoleMap, cols

N_TOY = 200_000

ROLES = RoleMap(group="group", reference=0, system_factor="sys",
                individual_factor="ind", outcome="outcome",
                pre_confounders=("base", "conf"),
                intermediate_confounders=("mid",))

# the toy population's own functional forms, so every fitted model is
# exactly specified and the estimators should agree with enumeration
EXACT = {
    "prop_sys": FeatureFormula((("col", "group"), ("col", "conf"), ("col", "base"),
                                ("inter", ("group", "conf")))),
    "prop_ind": FeatureFormula((("col", "group"), ("col", "conf"), ("col", "sys"),
                                ("col", "mid"), ("inter", ("group", "mid")))),
    "outcome": FeatureFormula((("col", "group"), ("col", "ind"), ("col", "sys"),
                               ("col", "conf"), ("col", "mid"), ("col", "base"),
                               ("inter", ("group", "ind")),
                               ("inter", ("group", "ind", "sys")),
                               ("inter", ("mid", "ind")))),
    # the nested target is a function of the three binary drivers plus an
    # additive baseline shift, so saturating those three is exact
    "nested": FeatureFormula((("col", "group"), ("col", "conf"), ("col", "sys"),
                              ("col", "base"),
                              ("inter", ("group", "conf")),
                              ("inter", ("group", "sys")),
                              ("inter", ("conf", "sys")),
                              ("inter", ("group", "conf", "sys")))),
}


def exact_specs():
    return NuisanceSpecs(prop_sys=ModelSpec(LOGISTIC_GLM, EXACT["prop_sys"]),
                         prop_ind=ModelSpec(LOGISTIC_GLM, EXACT["prop_ind"]),
                         outcome=ModelSpec(LINEAR, EXACT["outcome"]),
                         nested=ModelSpec(LINEAR, EXACT["nested"]))


# deliberately useless fits: a covariate-free propensity and a
# group-mean-only regression
JUNK_PROP = ModelSpec(LOGISTIC_GLM, cols())
JUNK_REG = ModelSpec(LINEAR, cols("group"))


@pytest.fixture(scope="module")
def toy_big():
    return Dataset.from_arrays(toypop.sample(N_TOY, seed=11))


@pytest.fixture(scope="module")
def toy_results(toy_big):
    nuis = fit_nuisances(toy_big, ROLES, InterventionSpec(), exact_specs())
    cf, _ = run_estimators(toy_big, ROLES, nuis, ESTIMATORS)
    disparity = estimate_initial_disparity(toy_big, ROLES)
    return disparity, cf, nuis


def test_all_estimators_match_enumeration(toy_results):
    _, cf, _ = toy_results
    want = toypop.psi_both()
    for name in ESTIMATORS:
        assert abs(cf[name][1] - want) < 0.005, (name, cf[name][1], want)


def test_disparity_matches_enumeration(toy_results):
    disparity, _, _ = toy_results
    assert abs(disparity.disparity[1] - toypop.decomposition()[0]) < 0.005
    assert abs(disparity.adjusted_means[1] - toypop.mean_given_group(1)) < 0.005
    assert abs(disparity.adjusted_means[0] - toypop.mean_given_group(0)) < 0.005


def test_single_factor_matches_enumeration(toy_big):
    sys_only = fit_nuisances(toy_big, ROLES,
                             InterventionSpec(ind=NoChange()), exact_specs())
    got = estimate_single_factor(toy_big, ROLES, sys_only, "sys")
    assert abs(got[1] - toypop.psi_sys_only()) < 0.005
    ind_only = fit_nuisances(toy_big, ROLES,
                             InterventionSpec(sys=NoChange()), exact_specs())
    got = estimate_single_factor(toy_big, ROLES, ind_only, "ind")
    assert abs(got[1] - toypop.psi_ind_only()) < 0.005


def test_single_factor_rejects_unknown_factor(toy_big):
    nuis = fit_nuisances(toy_big.subset(np.arange(500)), ROLES,
                         InterventionSpec(), exact_specs())
    with pytest.raises(DataError, match="factor"):
        estimate_single_factor(toy_big.subset(np.arange(500)), ROLES, nuis, "both")


def one_correct_set(which):
    """Nuisance specs with exactly one consistent model set.

    1: outcome and nested correct     2: system propensity and outcome
    3: both propensities correct
    """
    g = exact_specs()
    if which == 1:
        return NuisanceSpecs(prop_sys=JUNK_PROP, prop_ind=JUNK_PROP,
                             outcome=g.outcome, nested=g.nested)
    if which == 2:
        return NuisanceSpecs(prop_sys=g.prop_sys, prop_ind=JUNK_PROP,
                             outcome=g.outcome, nested=JUNK_REG)
    return NuisanceSpecs(prop_sys=g.prop_sys, prop_ind=g.prop_ind,
                         outcome=JUNK_REG, nested=JUNK_REG)


@pytest.fixture(scope="module")
def robustness_psis(toy_big):
    iv = InterventionSpec(sys_plugin=PLUGIN_OBSERVED)
    psis = {}
    for which in (1, 2, 3):
        nuis = fit_nuisances(toy_big, ROLES, iv, one_correct_set(which))
        cf, _ = run_estimators(toy_big, ROLES, nuis, ESTIMATORS)
        psis[which] = {name: cf[name][1] for name in ESTIMATORS}
    return psis


def test_triply_robust_under_each_correct_set(robustness_psis):
    want = toypop.psi_both()
    for which in (1, 2, 3):
        got = robustness_psis[which]["triply_robust"]
        assert abs(got - want) < 0.01, (which, got, want)


def test_non_robust_estimators_break(robustness_psis):
    want = toypop.psi_both()
    # each single-protection estimator loses consistency once a model it
    # relies on is replaced with a junk fit
    assert abs(robustness_psis[3]["imputation"] - want) > 0.05
    assert abs(robustness_psis[1]["weighting"] - want) > 0.05
    assert abs(robustness_psis[3]["impute_weight"] - want) > 0.05


def test_stratum_reporting_cell():
    ds = Dataset.from_arrays(toypop.sample(60_000, seed=21))
    roles = RoleMap(group="group", reference=0, system_factor="sys",
                    individual_factor="ind", outcome="outcome",
                    baseline=("base",), pre_confounders=("conf",),
                    intermediate_confounders=("mid",))
    iv = InterventionSpec(sys=Equalize(("base",)), ind=Equalize(("base",)))
    nuis = fit_nuisances(ds, roles, iv, exact_specs())
    stratum = ("base", 0.0)
    cf, _ = run_estimators(ds, roles, nuis, ("weighting", "triply_robust"),
                           stratum=stratum)
    want = toypop.psi_both(cell=0)
    assert abs(cf["weighting"][1] - want) < 0.02
    assert abs(cf["triply_robust"][1] - want) < 0.02
    # cell-restricted averaging is plain masked arithmetic over the
    # full-sample nuisance values
    mask = (ds.data["group"] == 1.0) & (ds.data["base"] == 0.0)
    w = (nuis.star_of_observed("sys", ds.data["sys"])
         * nuis.star_of_observed("ind", ds.data["ind"])
         / (nuis.p_sys_obs * nuis.p_ind_obs))
    np.testing.assert_allclose(cf["weighting"][1],
                               (w * ds.data["outcome"])[mask].mean(), atol=1e-12)
    # with the stratum column the only baseline covariate, the adjusted
    # means inside the cell are the raw cell means
    disparity = estimate_initial_disparity(ds, roles, stratum=stratum)
    raw1 = ds.data["outcome"][mask].mean()
    assert abs(disparity.adjusted_means[1] - raw1) < 1e-8
    assert abs(disparity.disparity[1] - toypop.decomposition(cell=0)[0]) < 0.02


def test_stratum_errors():
    ds = Dataset.from_arrays(toypop.sample(400, seed=2))
    nuis = fit_nuisances(ds, ROLES, InterventionSpec(), exact_specs())
    with pytest.raises(DataError, match="stratum column"):
        run_estimators(ds, ROLES, nuis, ("imputation",), stratum=("lab", 0.0))
    with pytest.raises(DataError, match="no rows"):
        run_estimators(ds, ROLES, nuis, ("imputation",), stratum=("base", 7.0))


def test_null_intervention_recovers_raw_means():
    ds = Dataset.from_arrays(toypop.sample(3_000, seed=5))
    iv = InterventionSpec(sys=NoChange(), ind=NoChange())
    nuis = fit_nuisances(ds, ROLES, iv, exact_specs())
    cf, _ = run_estimators(ds, ROLES, nuis, ESTIMATORS)
    raw = {lv: ds.data["outcome"][ds.data["group"] == lv].mean()
           for lv in (0.0, 1.0)}
    # weights are identically one, and the correction terms of the triply
    # robust estimator telescope back to the raw outcome
    assert cf["weighting"][1] == pytest.approx(raw[1], abs=1e-14)
    assert cf["triply_robust"][1] == pytest.approx(raw[1], abs=1e-10)
    disparity = estimate_initial_disparity(ds, ROLES)
    recs = decompose(disparity, cf["triply_robust"], "triply_robust", nuis)
    assert recs[0].reduction == pytest.approx(0.0, abs=1e-10)


def test_additivity_identity(toy_results):
    disparity, cf, nuis = toy_results
    for name in ESTIMATORS:
        for rec in decompose(disparity, cf[name], name, nuis):
            assert rec.identity_gap() < 1e-10


def test_percent_reduction_display():
    assert format_pct(-0.049 / -0.373 * 100.0) == "13.14%"
    assert format_pct(-0.183 / -0.611 * 100.0, decimals=1) == "29.9%"
    assert format_pct(None) == ""
    assert format_pct(5.0) == "5.00%"
    assert format_pct(-29.949, decimals=1) == "-29.9%"


def test_zero_disparity_has_no_percent():
    fit_like = estimate_initial_disparity(
        Dataset.from_arrays(toypop.sample(300, seed=1)), ROLES)
    fit_like.disparity[1] = 0.0
    recs = decompose(fit_like, {1: 0.5}, "imputation")
    assert recs[0].pct_reduction is None
    assert format_pct(recs[0].pct_reduction) == ""


def test_weight_trimming_and_normalization():
    ds = Dataset.from_arrays(toypop.sample(2_000, seed=7))
    nuis = fit_nuisances(ds, ROLES, InterventionSpec(), exact_specs())
    got, rep = estimate_weighting(ds, ROLES, nuis, normalize=True)
    mask = ds.data["group"] == 1.0
    w = (nuis.star_of_observed("sys", ds.data["sys"])
         * nuis.star_of_observed("ind", ds.data["ind"])
         / (nuis.p_sys_obs * nuis.p_ind_obs))[mask]
    np.testing.assert_allclose(got[1], np.average(ds.data["outcome"][mask],
                                                  weights=w), atol=1e-12)
    assert rep.normalized and rep.n_trimmed[1.0] == 0
    trimmed, rep2 = estimate_weighting(ds, ROLES, nuis, trim=(5.0, 95.0))
    assert rep2.n_trimmed[1.0] > 0
    lo, hi = np.percentile(w, [5.0, 95.0])
    assert rep2.weight_max[1.0] == pytest.approx(hi)
    assert rep2.weight_min[1.0] == pytest.approx(lo)
    np.testing.assert_allclose(trimmed[1],
                               (np.clip(w, lo, hi)
                                * ds.data["outcome"][mask]).mean(), atol=1e-12)


def test_positivity_warning_flag():
    ds = Dataset.from_arrays(toypop.sample(500, seed=9))
    nuis = fit_nuisances(ds, ROLES, InterventionSpec(), exact_specs())
    disparity = estimate_initial_disparity(ds, ROLES)
    cf, _ = run_estimators(ds, ROLES, nuis, ("imputation",))
    ok = decompose(disparity, cf["imputation"], "imputation", nuis)[0]
    assert not ok.positivity_warning
    nuis.p_sys_obs = nuis.p_sys_obs.copy()
    nuis.p_sys_obs[0] = 0.001
    flagged = decompose(disparity, cf["imputation"], "imputation", nuis)[0]
    assert flagged.positivity_warning
    assert flagged.prop_min == pytest.approx(0.001)


def test_unknown_estimator_rejected(toy_big):
    ds = toy_big.subset(np.arange(300))
    nuis = fit_nuisances(ds, ROLES, InterventionSpec(), exact_specs())
    with pytest.raises(DataError, match="unknown estimator"):
        run_estimators(ds, ROLES, nuis, ("magic",))
