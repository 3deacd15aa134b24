import numpy as np
import pytest

from gapdecomp.gbt import GbtParams
from gapdecomp.models import (GBT_BINARY, GBT_REGRESS, LINEAR, LOGISTIC_GLM,
                              ModelSpec, fit_model, model_from_json,
                              model_to_json, predict_model)
from gapdecomp.tabular import DataError, Dataset, cols


def make_ds(n=300, seed=2):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    p = 1.0 / (1.0 + np.exp(-(0.3 + x1 - 0.5 * x2)))
    return Dataset.from_arrays({
        "x1": x1,
        "x2": x2,
        "yb": (rng.random(n) < p).astype(np.float64),
        "yc": 1.0 + 2.0 * x1 - x2 + 0.2 * rng.standard_normal(n),
    })


def test_spec_validation():
    f = cols("x1", "x2")
    ModelSpec(LINEAR, f).validate()
    with pytest.raises(DataError, match="unknown model family"):
        ModelSpec("probit", f).validate()
    with pytest.raises(DataError, match="no intercept"):
        ModelSpec(GBT_REGRESS, f).validate()
    with pytest.raises(DataError, match="non-gbt"):
        ModelSpec(LINEAR, f, gbt=GbtParams()).validate()
    ModelSpec(GBT_BINARY, cols("x1", intercept=False), GbtParams()).validate()


def test_mirrored_regressor_follows_family():
    f = cols("x1")
    g = cols("x2")
    lin = ModelSpec(LOGISTIC_GLM, f).mirrored_regressor(g)
    assert lin.family == LINEAR and lin.formula == g and lin.gbt is None
    prm = GbtParams(n_trees=10)
    boosted = ModelSpec(GBT_BINARY, cols("x1", intercept=False), prm, seed=4)
    mirror = boosted.mirrored_regressor(cols("x2", intercept=False))
    assert mirror.family == GBT_REGRESS and mirror.gbt is prm and mirror.seed == 4


def test_fit_rows_subset():
    ds = make_ds()
    rows = np.arange(ds.n) < 150
    spec = ModelSpec(LINEAR, cols("x1", "x2"))
    part = fit_model(ds, spec, ds.data["yc"], rows=rows)
    full = fit_model(ds, spec, ds.data["yc"])
    assert not np.allclose(part.glm_fit.coef, full.glm_fit.coef)
    sub_fit = fit_model(ds.subset(rows), spec, ds.data["yc"][rows])
    np.testing.assert_array_equal(part.glm_fit.coef, sub_fit.glm_fit.coef)


@pytest.mark.parametrize("family,target", [
    (LINEAR, "yc"), (LOGISTIC_GLM, "yb"), (GBT_REGRESS, "yc"), (GBT_BINARY, "yb"),
])
def test_json_round_trip_all_families(family, target):
    ds = make_ds()
    gbt = GbtParams(n_trees=15, max_depth=2, min_child_weight=1.0) \
        if family in (GBT_REGRESS, GBT_BINARY) else None
    formula = cols("x1", "x2", intercept=gbt is None)
    model = fit_model(ds, ModelSpec(family, formula, gbt, seed=3), ds.data[target])
    back = model_from_json(model_to_json(model))
    np.testing.assert_array_equal(predict_model(back, ds), predict_model(model, ds))
    assert model_to_json(back) == model_to_json(model)


def test_degenerate_flag_surfaces():
    ds = make_ds(n=40)
    flat = fit_model(ds, ModelSpec(LOGISTIC_GLM, cols("x1")), np.zeros(40))
    assert flat.degenerate
    ok = fit_model(ds, ModelSpec(LOGISTIC_GLM, cols("x1")), ds.data["yb"])
    assert not ok.degenerate


def test_diagnostics_shapes():
    ds = make_ds(n=60)
    lin = fit_model(ds, ModelSpec(LINEAR, cols("x1")), ds.data["yc"])
    assert lin.diagnostics()["family"] == "linear"
    gbt = fit_model(ds, ModelSpec(GBT_REGRESS, cols("x1", intercept=False),
                                  GbtParams(n_trees=5, min_child_weight=1.0)),
                    ds.data["yc"])
    d = gbt.diagnostics()
    assert d["n_trees"] == 5 and np.isfinite(d["final_loss"])
