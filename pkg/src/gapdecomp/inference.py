"""Bootstrap inference over the whole estimation pipeline.

Each replicate resamples rows (or whole clusters), then reruns
everything: intervention distributions, nuisance fits, fold assignment
(re-randomized from the replicate seed when cross-fitting) and the
estimators. Standard errors are bootstrap standard deviations, normal
t/p values follow, and confidence intervals are percentile order
statistics: with B draws at level 1-alpha the bounds are the
ceil(B*alpha/2)-th smallest and largest draws.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .crossfit import crossfit_nuisances, make_folds
from .decomposition import (DisparityFit, EstimateRecord, decompose,
                            estimate_initial_disparity, format_pct,
                            run_estimators)
from .glm import EstimationError
from .nuisances import InterventionSpec, NuisanceSpecs, fit_nuisances
from .tabular import DataError, Dataset, RoleMap

QUANTITIES = ("disparity", "reduction", "remaining")


def derive_seed(base: int, *key) -> int:
    """Counter-style child seed: stable under reordering of the calls."""
    return int(np.random.SeedSequence(base, spawn_key=key).generate_state(1)[0])


@dataclass(frozen=True)
class AnalysisConfig:
    roles: RoleMap
    intervention: InterventionSpec
    specs: NuisanceSpecs
    estimators: tuple
    crossfit_k: int = 0           # 0 = plain in-sample fitting
    cluster_folds: bool = False
    normalize: bool = False
    trim: tuple = None
    stratum: tuple = None         # (column, level) reporting cell, or None
    seed: int = 0


def run_analysis(ds: Dataset, cfg: AnalysisConfig, fold_seed: int = None):
    """One full pipeline pass; returns (records, degenerate_flag).

    Models are always fitted on the full sample (or its cross-fitting
    folds); a stratum in the config only restricts which rows the
    disparity contrast and the counterfactual means average over.
    """
    disparity = estimate_initial_disparity(ds, cfg.roles, stratum=cfg.stratum)
    if cfg.crossfit_k >= 2:
        clusters = None
        if cfg.cluster_folds:
            if cfg.roles.cluster is None:
                raise DataError("cluster-respecting folds need a cluster role")
            clusters = ds.data[cfg.roles.cluster]
        plan = make_folds(ds.n, cfg.crossfit_k,
                          cfg.seed if fold_seed is None else fold_seed, clusters)
        nuis = crossfit_nuisances(ds, cfg.roles, cfg.intervention, cfg.specs, plan)
    else:
        nuis = fit_nuisances(ds, cfg.roles, cfg.intervention, cfg.specs)
    cf, wreport = run_estimators(ds, cfg.roles, nuis, cfg.estimators,
                                 normalize=cfg.normalize, trim=cfg.trim,
                                 stratum=cfg.stratum)
    records = []
    for name in cfg.estimators:
        records.extend(decompose(disparity, cf[name], name, nuis,
                                 wreport if name == "weighting" else None))
    return records, nuis.degenerate


def _resample_rows(ds: Dataset, roles: RoleMap, clustered: bool, rng) -> np.ndarray:
    if not clustered:
        return rng.integers(0, ds.n, ds.n)
    if roles.cluster is None:
        raise DataError("clustered bootstrap needs a cluster role")
    labels = ds.data[roles.cluster]
    uniq = np.unique(labels)
    draws = rng.integers(0, uniq.size, uniq.size)
    parts = [np.nonzero(labels == uniq[i])[0] for i in draws]
    return np.concatenate(parts)


def _one_replicate(args):
    ds, cfg, clustered, rep = args
    for attempt in (0, 1):
        seed = derive_seed(cfg.seed, rep, attempt)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        try:
            rows = _resample_rows(ds, cfg.roles, clustered, rng)
            records, degenerate = run_analysis(ds.subset(rows), cfg, fold_seed=seed)
        except (EstimationError, DataError, np.linalg.LinAlgError):
            # the point estimate has already validated the configuration,
            # so a DataError here means the resample itself is degenerate
            continue
        if degenerate:
            continue
        return rep, {(r.estimator, r.group_level):
                     (r.disparity, r.reduction, r.remaining) for r in records}
    return rep, None


@dataclass
class BootstrapResult:
    point: list                   # EstimateRecords from the full sample
    samples: dict                 # (estimator, level) -> (B_eff, 3) array
    b_requested: int
    b_effective: int
    n_failed: int
    clustered: bool
    seed: int


def bootstrap_analysis(ds: Dataset, cfg: AnalysisConfig, b: int,
                       clustered: bool = False, jobs: int = 1) -> BootstrapResult:
    """Full-pipeline bootstrap; the point estimate is the full-sample run."""
    if b < 1:
        raise DataError("bootstrap needs b >= 1")
    point, _ = run_analysis(ds, cfg, fold_seed=cfg.seed)
    tasks = [(ds, cfg, clustered, rep) for rep in range(b)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replicate, tasks,
                                    chunksize=max(1, b // (jobs * 4))))
    else:
        results = [_one_replicate(t) for t in tasks]
    results.sort(key=lambda t: t[0])
    keys = [(r.estimator, r.group_level) for r in point]
    collected = {k: [] for k in keys}
    n_failed = 0
    for _, rep_out in results:
        if rep_out is None:
            n_failed += 1
            continue
        for k in keys:
            collected[k].append(rep_out[k])
    samples = {k: np.asarray(v, dtype=np.float64) for k, v in collected.items()}
    b_eff = b - n_failed
    if b_eff == 0:
        raise EstimationError("all bootstrap replicates failed")
    return BootstrapResult(point, samples, b, b_eff, n_failed, clustered, cfg.seed)


def percentile_interval(draws: np.ndarray, level: float = 0.95):
    """Order-statistic percentile interval.

    k = ceil(B * alpha / 2); the interval is the k-th smallest to the
    k-th largest draw (1-indexed).
    """
    b = draws.shape[0]
    alpha = 1.0 - level
    k = math.ceil(b * alpha / 2.0)
    k = min(max(k, 1), b)
    s = np.sort(draws)
    return float(s[k - 1]), float(s[b - k])


def _normal_p(t: float) -> float:
    return math.erfc(abs(t) / math.sqrt(2.0))


@dataclass
class InferenceReport:
    rows: list
    b_requested: int
    b_effective: int
    n_failed: int
    clustered: bool
    level: float
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "ci_level": self.level,
            "ci_convention": "order statistic: ceil(B*alpha/2)-th smallest/largest",
            "bootstrap": {"requested": self.b_requested,
                          "effective": self.b_effective,
                          "failed": self.n_failed,
                          "clustered": self.clustered,
                          "seed": self.seed},
            "rows": self.rows,
        }, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        header = ("group,estimator,quantity,estimate,se,t_value,p_value,"
                  "ci_low,ci_high,pct_reduction")
        fmt = "%.17g"
        lines = [header]
        for r in self.rows:
            cells = [str(r["group"]), r["estimator"], r["quantity"]]
            for key in ("estimate", "se", "t_value", "p_value", "ci_low", "ci_high"):
                v = r.get(key)
                cells.append("" if v is None else fmt % v)
            pct = r.get("pct_reduction")
            cells.append("" if pct is None else format_pct(pct))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def summarize(result: BootstrapResult, level: float = 0.95) -> InferenceReport:
    rows = []
    for rec in result.point:
        draws = result.samples[(rec.estimator, rec.group_level)]
        points = {"disparity": rec.disparity, "reduction": rec.reduction,
                  "remaining": rec.remaining}
        for qi, quantity in enumerate(QUANTITIES):
            est = points[quantity]
            col = draws[:, qi]
            se = float(col.std(ddof=1)) if col.shape[0] > 1 else float("nan")
            if se > 0:
                t = est / se
                p = _normal_p(t)
            else:
                t = 0.0 if est == 0 else math.copysign(math.inf, est)
                p = 1.0 if est == 0 else 0.0
            lo, hi = percentile_interval(col, level)
            rows.append({
                "group": rec.group_level, "estimator": rec.estimator,
                "quantity": quantity, "estimate": est, "se": se,
                "t_value": t, "p_value": p, "ci_low": lo, "ci_high": hi,
                "pct_reduction": rec.pct_reduction if quantity == "reduction" else None,
            })
    return InferenceReport(rows, result.b_requested, result.b_effective,
                           result.n_failed, result.clustered, level, result.seed)
