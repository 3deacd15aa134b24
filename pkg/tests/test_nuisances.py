import numpy as np
import pytest

import toypop
from gapdecomp.models import LINEAR, LOGISTIC_GLM, ModelSpec
from gapdecomp.nuisances import (DRAW, MARGINALIZE, PLUGIN_INTERVENED,
                                 PLUGIN_OBSERVED, Equalize, InterventionSpec,
                                 NoChange, NuisanceSpecs, SetValue,
                                 fit_intervention_distributions, fit_nuisances)
from gapdecomp.tabular import DataError, Dataset, RoleMap, cols


def toy_ds(n=4000, seed=0):
    return Dataset.from_arrays(toypop.sample(n, seed))


def toy_roles(baseline=False):
    pre = ("conf",) if baseline else ("base", "conf")
    return RoleMap(group="group", reference=0, system_factor="sys",
                   individual_factor="ind", outcome="outcome",
                   baseline=("base",) if baseline else (),
                   pre_confounders=pre, intermediate_confounders=("mid",))


def toy_specs():
    return NuisanceSpecs(
        prop_sys=ModelSpec(LOGISTIC_GLM, cols("group", "conf", "base")),
        prop_ind=ModelSpec(LOGISTIC_GLM, cols("group", "conf", "sys", "mid")),
        outcome=ModelSpec(LINEAR, cols("group", "conf", "base", "sys", "mid", "ind")),
        nested=ModelSpec(LINEAR, cols("group", "conf", "base", "sys")),
    )


def test_equalize_matches_reference_proportion():
    ds = toy_ds()
    fit = fit_intervention_distributions(ds, toy_roles(), InterventionSpec())
    ref_rows = ds.data["group"] == 0.0
    want = ds.data["sys"][ref_rows].mean()
    np.testing.assert_allclose(fit.p_sys_star, want, atol=1e-6)
    want_ind = ds.data["ind"][ref_rows].mean()
    np.testing.assert_allclose(fit.p_ind_star, want_ind, atol=1e-6)


def test_equalize_with_allowable_is_stratum_proportion():
    ds = toy_ds()
    iv = InterventionSpec(sys=Equalize(("base",)), ind=Equalize(("base",)))
    fit = fit_intervention_distributions(ds, toy_roles(baseline=True), iv)
    g = ds.data["group"]
    b = ds.data["base"]
    for cell in (0.0, 1.0):
        want = ds.data["sys"][(g == 0.0) & (b == cell)].mean()
        got = fit.p_sys_star[b == cell]
        np.testing.assert_allclose(got, want, atol=1e-5)


def test_equalize_approaches_population_law():
    # the fitted intervention distribution is the reference empirical rate,
    # which converges to the enumerated population value
    ds = toy_ds(n=40_000, seed=3)
    fit = fit_intervention_distributions(ds, toy_roles(), InterventionSpec())
    want = toypop.star_sys(1)
    se = np.sqrt(want * (1 - want) / (ds.data["group"] == 0.0).sum())
    assert abs(fit.p_sys_star[0] - want) < 4 * se
    want_m = toypop.star_ind(1)
    assert abs(fit.p_ind_star[0] - want_m) < 4 * np.sqrt(want_m * (1 - want_m)
                                                         / ds.n * 2)


def test_set_value_is_exact_point_mass():
    ds = toy_ds(n=500)
    iv = InterventionSpec(sys=SetValue(1), ind=SetValue(0))
    nuis = fit_nuisances(ds, toy_roles(), iv, toy_specs())
    assert nuis.point_mass_sys and nuis.point_mass_ind
    np.testing.assert_array_equal(nuis.p_sys_star, 1.0)
    np.testing.assert_array_equal(nuis.p_ind_star, 0.0)
    sys_obs = ds.data["sys"]
    star = nuis.star_of_observed("sys", sys_obs)
    np.testing.assert_array_equal(star, (sys_obs == 1.0).astype(float))
    # weights vanish exactly for rows whose observed value has star mass 0
    assert (star[sys_obs == 0.0] == 0.0).all()


def test_no_change_keeps_observed_values():
    ds = toy_ds(n=2000)
    iv = InterventionSpec(sys=NoChange(), ind=NoChange())
    nuis = fit_nuisances(ds, toy_roles(), iv, toy_specs())
    # the intervention law collapses onto the fitted propensities, so the
    # probability ratios in every estimator become exactly one
    np.testing.assert_array_equal(
        nuis.star_of_observed("sys", ds.data["sys"]), nuis.p_sys_obs)
    np.testing.assert_array_equal(
        nuis.star_of_observed("ind", ds.data["ind"]), nuis.p_ind_obs)
    # with the individual factor untouched the averaged outcome prediction
    # is the plain prediction
    np.testing.assert_array_equal(nuis.y_bar, nuis.y_hat)
    np.testing.assert_array_equal(nuis.nested_bar, nuis.nested_obs)


def test_marginalize_integration_identities():
    ds = toy_ds(n=1500)
    nuis = fit_nuisances(ds, toy_roles(), InterventionSpec(), toy_specs())
    np.testing.assert_allclose(
        nuis.y_bar,
        (1 - nuis.p_ind_star) * nuis.y_ind0 + nuis.p_ind_star * nuis.y_ind1,
        atol=1e-12)
    np.testing.assert_allclose(
        nuis.nested_bar,
        (1 - nuis.p_sys_star) * nuis.nested_sys0
        + nuis.p_sys_star * nuis.nested_sys1,
        atol=1e-12)


def test_plugin_variants():
    ds = toy_ds(n=800)
    default = fit_nuisances(ds, toy_roles(), InterventionSpec(), toy_specs())
    assert default.plugin == PLUGIN_INTERVENED
    assert default.y_bar_star is not None
    obs = fit_nuisances(ds, toy_roles(),
                        InterventionSpec(sys_plugin=PLUGIN_OBSERVED), toy_specs())
    assert obs.y_bar_star is None
    # the intervened average ignores the observed system factor, the
    # observed-plugin average keeps it, so they must differ somewhere
    assert not np.allclose(default.y_bar_star, default.y_bar)


def test_draw_integration_converges_to_marginalize():
    ds = toy_ds(n=1200)
    exact = fit_nuisances(ds, toy_roles(), InterventionSpec(), toy_specs())
    drawn = fit_nuisances(ds, toy_roles(),
                          InterventionSpec(integration=DRAW, n_draws=400, seed=9),
                          toy_specs())
    assert abs(drawn.y_bar.mean() - exact.y_bar.mean()) < 0.01
    assert abs(drawn.nested_bar.mean() - exact.nested_bar.mean()) < 0.01


def test_draw_integration_seeded():
    ds = toy_ds(n=600)
    iv = lambda s: InterventionSpec(integration=DRAW, n_draws=3, seed=s)
    a = fit_nuisances(ds, toy_roles(), iv(4), toy_specs())
    b = fit_nuisances(ds, toy_roles(), iv(4), toy_specs())
    c = fit_nuisances(ds, toy_roles(), iv(5), toy_specs())
    np.testing.assert_array_equal(a.y_bar, b.y_bar)
    assert not np.array_equal(a.y_bar, c.y_bar)


def test_intervention_validation():
    roles = toy_roles()  # empty baseline list
    with pytest.raises(DataError, match="allowable"):
        InterventionSpec(sys=Equalize(("base",))).validate(roles)
    with pytest.raises(DataError, match="SetValue"):
        InterventionSpec(sys=SetValue(2)).validate(roles)
    with pytest.raises(DataError, match="integration"):
        InterventionSpec(integration="exact").validate(roles)
    with pytest.raises(DataError, match="n_draws"):
        InterventionSpec(integration=DRAW, n_draws=0).validate(roles)
    with pytest.raises(DataError, match="sys_plugin"):
        InterventionSpec(sys_plugin="both").validate(roles)
    with pytest.raises(DataError, match="intervention mode"):
        InterventionSpec(sys="equalize").validate(roles)


def test_nuisance_spec_validation():
    good = toy_specs()
    good.validate()
    with pytest.raises(DataError, match="classifier"):
        NuisanceSpecs(prop_sys=ModelSpec(LINEAR, cols("group")),
                      prop_ind=good.prop_ind, outcome=good.outcome,
                      nested=good.nested).validate()
    with pytest.raises(DataError, match="regression"):
        NuisanceSpecs(prop_sys=good.prop_sys, prop_ind=good.prop_ind,
                      outcome=ModelSpec(LOGISTIC_GLM, cols("group")),
                      nested=good.nested).validate()


def test_degenerate_factor_flagged():
    raw = toypop.sample(300, 8)
    raw["sys"] = np.ones(300)
    ds = Dataset.from_arrays(raw)
    nuis = fit_nuisances(ds, toy_roles(), InterventionSpec(), toy_specs())
    assert nuis.degenerate


def test_propensity_range_diagnostics():
    ds = toy_ds(n=900)
    nuis = fit_nuisances(ds, toy_roles(), InterventionSpec(), toy_specs())
    rng = nuis.diagnostics["propensities"]
    assert 0.0 < rng["p_sys_obs_min"] <= rng["p_sys_obs_max"] < 1.0
    assert nuis.provenance == "in_sample"
