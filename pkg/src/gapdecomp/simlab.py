"""Synthetic benchmark for the decomposition estimators.

A fixed structural data-generating process with a binary group, one
binary baseline covariate, three standard-normal confounders, a binary
system-level factor, a continuous intermediate confounder, a binary
individual-level factor and a continuous outcome. The on-paper truth of
the disparity reduction is evaluated by Monte Carlo straight from the
structural equations, and four misspecification scenarios re-fit the
nuisance models with interaction terms dropped and a distorted
confounder set swapped in.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .decomposition import ESTIMATORS
from .gbt import GbtParams
from .glm import EstimationError, sigmoid
from .inference import AnalysisConfig, derive_seed, run_analysis
from .models import GBT_BINARY, GBT_REGRESS, LINEAR, LOGISTIC_GLM, ModelSpec
from .nuisances import Equalize, InterventionSpec, NuisanceSpecs
from .tabular import DataError, Dataset, FeatureFormula, RoleMap

CONVENTIONS = ("stratum", "marginal")
METHODS = ("glm", "gbt")
SCENARIOS = (1, 2, 3, 4)

# Reference value of the disparity reduction for this benchmark process,
# reproduced by the Monte Carlo oracle under the default ("stratum")
# convention: the reduction for comparison-group rows in the modal
# baseline cell (base == 0), with intervention distributions conditional
# on the baseline covariate.
BENCHMARK_TRUTH = 0.358


def _sys_prob(group, base, c1, c2, c3):
    return sigmoid(-0.8 + group + 1.5 * base + c1 + 0.2 * c2 - 0.5 * c3 + group * c3)


def _mid_mean(group, base, c1, c2, c3, sys):
    return (-0.5 + 0.2 * group + 0.5 * base - 0.5 * c1 + 0.7 * c2 + 0.5 * c3
            + 1.2 * sys)


def _ind_prob(group, base, c1, c2, c3, sys, mid):
    return sigmoid(-1.0 + 2.0 * group + 0.2 * sys + base - c1 - 0.2 * c2
                   + 1.5 * c3 + group * c2 + 0.5 * mid)


def _outcome_mean(group, base, c1, c2, c3, sys, mid, ind):
    return (1.0 - 0.5 * group + 0.7 * ind - 0.2 * group * ind
            + 0.5 * group * ind * sys + sys + base - c1 + 0.5 * c2 - 0.5 * c3
            - 0.5 * mid)


def _draw_population(n: int, rng) -> dict:
    base = (rng.random(n) < 0.4).astype(np.float64)
    group = (rng.random(n) < sigmoid(0.5 - 0.5 * base)).astype(np.float64)
    c1 = rng.standard_normal(n)
    c2 = rng.standard_normal(n)
    c3 = rng.standard_normal(n)
    sys = (rng.random(n) < _sys_prob(group, base, c1, c2, c3)).astype(np.float64)
    mid = _mid_mean(group, base, c1, c2, c3, sys) + rng.standard_normal(n)
    ind = (rng.random(n) < _ind_prob(group, base, c1, c2, c3, sys, mid)).astype(np.float64)
    outcome = (_outcome_mean(group, base, c1, c2, c3, sys, mid, ind)
               + rng.standard_normal(n))
    return {"group": group, "base": base, "conf1": c1, "conf2": c2, "conf3": c3,
            "sys": sys, "mid": mid, "ind": ind, "outcome": outcome}


def generate_benchmark(n: int, seed: int) -> Dataset:
    """Draw n rows of the benchmark process."""
    if n < 1:
        raise DataError("n must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return Dataset.from_arrays(_draw_population(n, rng))


def misspecify_features(c1, c2, c3):
    """The distorted confounder set used by the misspecified models."""
    t1 = np.exp(c1) / 2.0
    t2 = c2 / (1.0 + np.exp(c1)) + 10.0
    t3 = (c1 * c3 / 25.0 + 0.6) ** 3
    return t1, t2, t3


def benchmark_roles(convention: str = "stratum") -> RoleMap:
    """Role map for the benchmark columns.

    Under "stratum" (the default) the binary baseline trait is declared
    as a baseline covariate: intervention distributions condition on it
    and reporting is restricted to its reference cell (base == 0).
    Under "marginal" it rides along with the confounders, intervention
    distributions are unconditional reference-group rates, and reductions
    compare raw group means over all comparison rows.
    """
    if convention not in CONVENTIONS:
        raise DataError(f"unknown convention {convention!r}")
    if convention == "marginal":
        return RoleMap(group="group", reference=0, system_factor="sys",
                       individual_factor="ind", outcome="outcome",
                       baseline=(), pre_confounders=("base", "conf1", "conf2", "conf3"),
                       intermediate_confounders=("mid",))
    return RoleMap(group="group", reference=0, system_factor="sys",
                   individual_factor="ind", outcome="outcome",
                   baseline=("base",), pre_confounders=("conf1", "conf2", "conf3"),
                   intermediate_confounders=("mid",))


def benchmark_intervention(convention: str = "stratum", integration: str = "marginalize",
                           n_draws: int = 0, seed: int = 0) -> InterventionSpec:
    allow = ("base",) if convention == "stratum" else ()
    return InterventionSpec(sys=Equalize(allow), ind=Equalize(allow),
                            integration=integration, n_draws=n_draws, seed=seed)


def benchmark_stratum(convention: str = "stratum"):
    """Reporting cell for the convention; None when reporting is marginal."""
    return ("base", 0.0) if convention == "stratum" else None


_T1 = ("transform", "exp_half", ("conf1",))
_T2 = ("transform", "exp_damp10", ("conf1", "conf2"))
_T3 = ("transform", "cross_cube", ("conf1", "conf3"))


def _glm_formulas(correct: bool) -> dict:
    c = [("col", "group"), ("col", "base")]
    raw = [("col", "conf1"), ("col", "conf2"), ("col", "conf3")]
    bad = [_T1, _T2, _T3]
    if correct:
        return {
            "prop_sys": FeatureFormula(tuple(c + raw + [("inter", ("group", "conf3"))])),
            "prop_ind": FeatureFormula(tuple(c + [("col", "sys")] + raw
                                             + [("col", "mid"),
                                                ("inter", ("group", "conf2"))])),
            "outcome": FeatureFormula(tuple(c + [("col", "ind"), ("col", "sys")] + raw
                                            + [("col", "mid"),
                                               ("inter", ("group", "ind")),
                                               ("inter", ("group", "ind", "sys"))])),
            "nested": FeatureFormula(tuple(c + [("col", "sys")] + raw
                                           + [("inter", ("group", "sys"))])),
        }
    # Misspecification distorts the three behavioural models: interactions
    # dropped, confounders swapped for their transformed versions, and the
    # intermediate confounder lost from the individual-factor propensity.
    # The nested model keeps the plain covariates in every scenario; it is
    # a projection of the fitted outcome model, not a model of the data,
    # so it always regresses on the covariates as recorded.
    return {
        "prop_sys": FeatureFormula(tuple(c + bad)),
        "prop_ind": FeatureFormula(tuple(c + [("col", "sys")] + bad)),
        "outcome": FeatureFormula(tuple(c + [("col", "ind"), ("col", "sys")] + bad
                                        + [("col", "mid")])),
        "nested": FeatureFormula(tuple(c + [("col", "sys")] + raw)),
    }


def _gbt_formulas(correct: bool) -> dict:
    # For the tree learners, misspecification means receiving the
    # transformed confounders in place of the raw ones. No variable is
    # deleted: the transforms are invertible, so a flexible learner can
    # in principle recover the true nuisance functions from them, which
    # is exactly the repair that cross-fitting is meant to certify.
    c = [("col", "group"), ("col", "base")]
    raw = [("col", "conf1"), ("col", "conf2"), ("col", "conf3")]
    bad = [_T1, _T2, _T3]
    conf = raw if correct else bad
    return {
        "prop_sys": FeatureFormula(tuple(c + conf), intercept=False),
        "prop_ind": FeatureFormula(tuple(c + [("col", "sys")] + conf
                                         + [("col", "mid")]),
                                   intercept=False),
        "outcome": FeatureFormula(tuple(c + [("col", "ind"), ("col", "sys")] + conf
                                        + [("col", "mid")]), intercept=False),
        "nested": FeatureFormula(tuple(c + [("col", "sys")] + raw), intercept=False),
    }


def scenario_specs(scenario: int, method: str = "glm", gbt_params: GbtParams = None,
                   seed: int = 0):
    """Nuisance model specs for a misspecification scenario.

    1: outcome-side models correct, both propensities misspecified
    2: both propensities correct, outcome-side models misspecified
    3: system propensity and outcome model correct, the rest misspecified
    4: everything misspecified
    The intervention-distribution fits are always correctly specified.
    """
    if scenario not in SCENARIOS:
        raise DataError(f"unknown scenario {scenario!r}")
    if method not in METHODS:
        raise DataError(f"unknown method {method!r}")
    correct_by_slot = {
        1: {"prop_sys": False, "prop_ind": False, "outcome": True, "nested": True},
        2: {"prop_sys": True, "prop_ind": True, "outcome": False, "nested": False},
        3: {"prop_sys": True, "prop_ind": False, "outcome": True, "nested": False},
        4: {"prop_sys": False, "prop_ind": False, "outcome": False, "nested": False},
    }[scenario]
    if method == "glm":
        good, bad = _glm_formulas(True), _glm_formulas(False)
        pick = lambda slot: (good if correct_by_slot[slot] else bad)[slot]
        return NuisanceSpecs(
            prop_sys=ModelSpec(LOGISTIC_GLM, pick("prop_sys")),
            prop_ind=ModelSpec(LOGISTIC_GLM, pick("prop_ind")),
            outcome=ModelSpec(LINEAR, pick("outcome")),
            nested=ModelSpec(LINEAR, pick("nested")),
        )
    params = gbt_params or GbtParams()
    good, bad = _gbt_formulas(True), _gbt_formulas(False)
    pick = lambda slot: (good if correct_by_slot[slot] else bad)[slot]
    return NuisanceSpecs(
        prop_sys=ModelSpec(GBT_BINARY, pick("prop_sys"), params, derive_seed(seed, 1)),
        prop_ind=ModelSpec(GBT_BINARY, pick("prop_ind"), params, derive_seed(seed, 2)),
        outcome=ModelSpec(GBT_REGRESS, pick("outcome"), params, derive_seed(seed, 3)),
        nested=ModelSpec(GBT_REGRESS, pick("nested"), params, derive_seed(seed, 4)),
    )


@dataclass
class TruthReport:
    delta_true: float
    mc_se: float
    mean_observed: float
    mean_counterfactual: float
    n_comparison: int
    convention: str
    n_draws: int
    seed: int
    null_intervention: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "delta_true": self.delta_true,
            "mc_se": self.mc_se,
            "mean_observed": self.mean_observed,
            "mean_counterfactual": self.mean_counterfactual,
            "n_comparison": self.n_comparison,
            "convention": self.convention,
            "n_draws": self.n_draws,
            "seed": self.seed,
            "null_intervention": self.null_intervention,
        }, indent=2, sort_keys=True)


def true_value(n_draws: int, seed: int, convention: str = "stratum",
               null_intervention: bool = False) -> TruthReport:
    """Monte Carlo truth straight from the structural equations.

    Draws a population, replays the comparison group with both target
    factors drawn from the reference group's empirical laws (conditional
    on the baseline trait under "stratum", unconditional under
    "marginal"), regenerating the intermediate confounder and the
    outcome with fresh noise. The reported value is the mean observed-
    minus-counterfactual outcome over the convention's reporting rows
    (the base == 0 comparison cell, or every comparison row), with its
    Monte Carlo standard error. With null_intervention=True the factors
    are redrawn from the comparison group's own structural laws instead,
    which must leave the mean unchanged up to noise.
    """
    if convention not in CONVENTIONS:
        raise DataError(f"unknown convention {convention!r}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pop = _draw_population(n_draws, rng)
    g1 = pop["group"] == 1.0
    n1 = int(g1.sum())
    base, c1, c2, c3 = (pop[k][g1] for k in ("base", "conf1", "conf2", "conf3"))
    ref = pop["group"] == 0.0

    if null_intervention:
        p_sys = _sys_prob(1.0, base, c1, c2, c3)
    elif convention == "marginal":
        p_sys = np.full(n1, pop["sys"][ref].mean())
    else:
        p_sys = np.where(base == 1.0,
                         pop["sys"][ref & (pop["base"] == 1.0)].mean(),
                         pop["sys"][ref & (pop["base"] == 0.0)].mean())
    sys_cf = (rng.random(n1) < p_sys).astype(np.float64)
    mid_cf = _mid_mean(1.0, base, c1, c2, c3, sys_cf) + rng.standard_normal(n1)

    if null_intervention:
        p_ind = _ind_prob(1.0, base, c1, c2, c3, sys_cf, mid_cf)
    elif convention == "marginal":
        p_ind = np.full(n1, pop["ind"][ref].mean())
    else:
        p_ind = np.where(base == 1.0,
                         pop["ind"][ref & (pop["base"] == 1.0)].mean(),
                         pop["ind"][ref & (pop["base"] == 0.0)].mean())
    ind_cf = (rng.random(n1) < p_ind).astype(np.float64)
    y_cf = (_outcome_mean(1.0, base, c1, c2, c3, sys_cf, mid_cf, ind_cf)
            + rng.standard_normal(n1))

    cell = base == 0.0 if convention == "stratum" else np.ones(n1, dtype=bool)
    observed = pop["outcome"][g1][cell]
    diff = observed - y_cf[cell]
    return TruthReport(
        delta_true=float(diff.mean()),
        mc_se=float(diff.std(ddof=1) / math.sqrt(diff.shape[0])),
        mean_observed=float(observed.mean()),
        mean_counterfactual=float(y_cf[cell].mean()),
        n_comparison=int(diff.shape[0]),
        convention=convention,
        n_draws=n_draws,
        seed=seed,
        null_intervention=null_intervention,
    )


@dataclass(frozen=True)
class SimStudyConfig:
    scenario: int
    method: str = "glm"
    estimators: tuple = ESTIMATORS
    n: int = 2000
    replicates: int = 200
    crossfit_k: int = 0
    convention: str = "stratum"
    seed: int = 0
    gbt: GbtParams = None


def _analysis_config(sim: SimStudyConfig, rep_seed: int) -> AnalysisConfig:
    roles = benchmark_roles(sim.convention)
    intervention = benchmark_intervention(sim.convention)
    specs = scenario_specs(sim.scenario, sim.method, sim.gbt, seed=rep_seed)
    return AnalysisConfig(roles=roles, intervention=intervention, specs=specs,
                          estimators=tuple(sim.estimators),
                          crossfit_k=sim.crossfit_k,
                          stratum=benchmark_stratum(sim.convention),
                          seed=rep_seed)


def _one_sim_replicate(args):
    sim, rep = args
    for attempt in (0, 1):
        rep_seed = derive_seed(sim.seed, rep, attempt)
        try:
            ds = generate_benchmark(sim.n, rep_seed)
            cfg = _analysis_config(sim, rep_seed)
            records, degenerate = run_analysis(ds, cfg, fold_seed=rep_seed)
        except (EstimationError, DataError, np.linalg.LinAlgError):
            # config mistakes surface from the eager check in
            # run_replicates; a DataError here is a pathological draw
            continue
        if degenerate:
            continue
        return rep, {r.estimator: r.reduction for r in records}
    return rep, None


@dataclass
class SimResult:
    config: SimStudyConfig
    estimator_names: tuple
    reductions: np.ndarray        # (n_ok, n_estimators)
    replicate_ids: np.ndarray
    n_failed: int

    def to_csv(self) -> str:
        lines = ["replicate,estimator,reduction"]
        for i, rid in enumerate(self.replicate_ids):
            for j, name in enumerate(self.estimator_names):
                lines.append(f"{int(rid)},{name},{'%.17g' % self.reductions[i, j]}")
        return "\n".join(lines) + "\n"


def run_replicates(sim: SimStudyConfig, jobs: int = 1) -> SimResult:
    """Monte Carlo replicates of the full estimation pipeline."""
    if sim.scenario not in SCENARIOS:
        raise DataError(f"unknown scenario {sim.scenario!r}")
    # surface configuration mistakes before the replicate loop, where
    # DataError is treated as a per-draw failure
    _analysis_config(sim, sim.seed)
    tasks = [(sim, rep) for rep in range(sim.replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_sim_replicate, tasks,
                                    chunksize=max(1, sim.replicates // (jobs * 4))))
    else:
        results = [_one_sim_replicate(t) for t in tasks]
    results.sort(key=lambda t: t[0])
    names = tuple(sim.estimators)
    rows, ids = [], []
    n_failed = 0
    for rep, out in results:
        if out is None:
            n_failed += 1
            continue
        rows.append([out[name] for name in names])
        ids.append(rep)
    if not rows:
        raise EstimationError("every simulation replicate failed")
    return SimResult(sim, names, np.asarray(rows, dtype=np.float64),
                     np.asarray(ids, dtype=np.int64), n_failed)


def summarize_metrics(result: SimResult, delta_true: float) -> dict:
    """Median bias and median RMSE per estimator against the given truth."""
    out = {}
    for j, name in enumerate(result.estimator_names):
        est = result.reductions[:, j]
        err = est - delta_true
        med_bias = float(np.median(est) - delta_true)
        out[name] = {
            "median_bias": med_bias,
            "median_rmse": float(math.sqrt(np.median(err * err))),
            "pct_median_bias": (float("nan") if delta_true == 0.0
                                else med_bias / delta_true * 100.0),
            "n_replicates": int(est.shape[0]),
        }
    return out


def metrics_to_csv(metrics: dict, delta_true: float) -> str:
    lines = ["estimator,truth,median_bias,median_rmse,pct_median_bias,n_replicates"]
    for name, m in metrics.items():
        lines.append(",".join([
            name, "%.17g" % delta_true, "%.17g" % m["median_bias"],
            "%.17g" % m["median_rmse"], "%.17g" % m["pct_median_bias"],
            str(m["n_replicates"]),
        ]))
    return "\n".join(lines) + "\n"
