import json
import math

import numpy as np
import pytest

import toypop
from gapdecomp.decomposition import EstimateRecord
from gapdecomp.glm import EstimationError
from gapdecomp.inference import (AnalysisConfig, BootstrapResult,
                                 bootstrap_analysis, derive_seed,
                                 percentile_interval, run_analysis, summarize)
from gapdecomp.models import LINEAR, LOGISTIC_GLM, ModelSpec
from gapdecomp.nuisances import InterventionSpec, NuisanceSpecs
from gapdecomp.tabular import DataError, Dataset, RoleMap, cols

ROLES = RoleMap(group="group", reference=0, system_factor="sys",
                individual_factor="ind", outcome="outcome",
                pre_confounders=("base", "conf"),
                intermediate_confounders=("mid",))


def specs():
    return NuisanceSpecs(
        prop_sys=ModelSpec(LOGISTIC_GLM, cols("group", "conf", "base")),
        prop_ind=ModelSpec(LOGISTIC_GLM, cols("group", "conf", "sys", "mid")),
        outcome=ModelSpec(LINEAR, cols("group", "conf", "base", "sys", "mid", "ind")),
        nested=ModelSpec(LINEAR, cols("group", "conf", "base", "sys")),
    )


def config(**kw):
    base = dict(roles=ROLES, intervention=InterventionSpec(), specs=specs(),
                estimators=("imputation", "weighting", "triply_robust"), seed=5)
    base.update(kw)
    return AnalysisConfig(**base)


def toy_ds(n=400, seed=0, clusters=None):
    raw = toypop.sample(n, seed)
    if clusters is not None:
        raw["clu"] = np.asarray(clusters, dtype=np.float64)
    return Dataset.from_arrays(raw)


def test_percentile_interval_order_statistics():
    draws = np.arange(1, 101) / 100.0
    rng = np.random.default_rng(0)
    rng.shuffle(draws)
    # k = ceil(100 * 0.05 / 2) = 3: third smallest and third largest
    assert percentile_interval(draws) == (0.03, 0.98)
    assert percentile_interval(draws, level=0.5) == (0.25, 0.76)
    tiny = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
    assert percentile_interval(tiny) == (1.0, 5.0)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(42, 1, 0) == derive_seed(42, 1, 0)
    assert derive_seed(42, 1, 0) != derive_seed(42, 2, 0)
    assert derive_seed(42, 1, 0) != derive_seed(43, 1, 0)


def test_run_analysis_records_and_identity():
    ds = toy_ds()
    records, degenerate = run_analysis(ds, config())
    assert not degenerate
    assert [r.estimator for r in records] == ["imputation", "weighting",
                                              "triply_robust"]
    for rec in records:
        assert rec.group_level == 1.0
        assert rec.identity_gap() < 1e-10


def test_run_analysis_crossfit_path():
    ds = toy_ds(n=600, seed=8)
    a, _ = run_analysis(ds, config(crossfit_k=2), fold_seed=1)
    b, _ = run_analysis(ds, config(crossfit_k=2), fold_seed=1)
    c, _ = run_analysis(ds, config(crossfit_k=2), fold_seed=2)
    plain, _ = run_analysis(ds, config())
    assert a[0].reduction == b[0].reduction
    assert a[0].reduction != c[0].reduction
    assert a[0].reduction != plain[0].reduction


def test_bootstrap_identity_in_every_replicate():
    ds = toy_ds(n=300, seed=4)
    res = bootstrap_analysis(ds, config(), b=40)
    assert res.b_effective + res.n_failed == 40
    for key, draws in res.samples.items():
        assert draws.shape == (res.b_effective, 3)
        gap = np.abs(draws[:, 0] - draws[:, 1] - draws[:, 2])
        assert gap.max() < 1e-10, key


def test_bootstrap_deterministic_and_jobs_invariant():
    ds = toy_ds(n=250, seed=2)
    a = bootstrap_analysis(ds, config(), b=12)
    b = bootstrap_analysis(ds, config(), b=12)
    c = bootstrap_analysis(ds, config(), b=12, jobs=2)
    for key in a.samples:
        assert np.array_equal(a.samples[key], b.samples[key])
        assert np.array_equal(a.samples[key], c.samples[key])


def test_clustered_bootstrap_resamples_whole_clusters():
    labels = np.repeat(np.arange(10), 40)
    ds = toy_ds(n=400, seed=6, clusters=labels)
    roles = RoleMap(group="group", reference=0, system_factor="sys",
                    individual_factor="ind", outcome="outcome",
                    pre_confounders=("base", "conf"),
                    intermediate_confounders=("mid",), cluster="clu")
    res = bootstrap_analysis(ds, config(roles=roles), b=10, clustered=True)
    assert res.clustered
    iid = bootstrap_analysis(ds, config(roles=roles), b=10)
    key = ("imputation", 1.0)
    assert not np.array_equal(res.samples[key], iid.samples[key])


def test_clustered_bootstrap_needs_cluster_role():
    ds = toy_ds(n=100, seed=1)
    with pytest.raises(DataError, match="cluster"):
        bootstrap_analysis(ds, config(), b=2, clustered=True)


def test_bootstrap_rejects_bad_b():
    ds = toy_ds(n=100, seed=1)
    with pytest.raises(DataError, match="b >= 1"):
        bootstrap_analysis(ds, config(), b=0)


def test_all_replicates_failing_is_an_error():
    raw = toypop.sample(60, 3)
    raw["sys"] = np.ones(60)      # degenerate factor: every refit collapses
    ds = Dataset.from_arrays(raw)
    with pytest.raises(EstimationError, match="all bootstrap replicates"):
        bootstrap_analysis(ds, config(), b=3)


def synthetic_result(est, se):
    rec = EstimateRecord(1.0, "imputation", est - 0.05, 0.0, est, -0.05,
                         est / (est - 0.05) * 100.0)
    d = se / math.sqrt(2.0)
    draws = np.array([[rec.disparity, est - d, -0.05],
                      [rec.disparity, est + d, -0.05]])
    return BootstrapResult([rec], {("imputation", 1.0): draws},
                           2, 2, 0, False, 0)


def test_summary_t_and_p_columns():
    report = summarize(synthetic_result(-0.087, 0.018))
    row = next(r for r in report.rows if r["quantity"] == "reduction")
    assert row["se"] == pytest.approx(0.018, abs=1e-12)
    assert row["t_value"] == pytest.approx(-0.087 / 0.018, abs=1e-9)
    assert row["p_value"] == pytest.approx(math.erfc(abs(row["t_value"])
                                                     / math.sqrt(2.0)))
    assert row["p_value"] < 1e-4
    assert row["pct_reduction"] is not None
    disp = next(r for r in report.rows if r["quantity"] == "disparity")
    assert disp["pct_reduction"] is None


def test_summary_ci_columns_match_percentile_rule():
    ds = toy_ds(n=200, seed=12)
    res = bootstrap_analysis(ds, config(estimators=("triply_robust",)), b=25)
    report = summarize(res, level=0.9)
    draws = res.samples[("triply_robust", 1.0)]
    for qi, q in enumerate(("disparity", "reduction", "remaining")):
        row = next(r for r in report.rows if r["quantity"] == q)
        lo, hi = percentile_interval(draws[:, qi], 0.9)
        assert (row["ci_low"], row["ci_high"]) == (lo, hi)
        assert row["estimate"] == pytest.approx(
            {"disparity": res.point[0].disparity,
             "reduction": res.point[0].reduction,
             "remaining": res.point[0].remaining}[q])


def test_report_serialization():
    report = summarize(synthetic_result(-0.1, 0.02))
    obj = json.loads(report.to_json())
    assert obj["bootstrap"]["effective"] == 2
    assert "order statistic" in obj["ci_convention"]
    csv = report.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == ("group,estimator,quantity,estimate,se,t_value,p_value,"
                        "ci_low,ci_high,pct_reduction")
    assert len(lines) == 4
    reduction_line = [l for l in lines if ",reduction," in l][0]
    assert reduction_line.endswith("%")
