"""Command-line front end.

Four subcommands, each driven by a JSON config file and writing into an
output directory:

  analyze    fit the decomposition on a CSV dataset, optionally with
             bootstrap inference -> report.json, report.csv
  simulate   Monte Carlo study of the estimators on the built-in
             benchmark process -> estimates.csv, metrics.json, metrics.csv
  oracle     Monte Carlo truth of the benchmark reduction -> truth.json
  generate   draw a benchmark dataset -> data.csv, meta.json

Config files are validated strictly: a misspelled or unknown key is an
error, not a silent default. Exit codes: 0 success, 2 config problem,
3 data problem, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .decomposition import ESTIMATORS
from .gbt import GbtParams
from .glm import EstimationError
from .inference import (AnalysisConfig, InferenceReport, bootstrap_analysis,
                        run_analysis, summarize)
from .models import FAMILIES, ModelSpec
from .nuisances import (DRAW, MARGINALIZE, PLUGIN_INTERVENED, PLUGIN_OBSERVED,
                        Equalize, InterventionSpec, NoChange, NuisanceSpecs,
                        SetValue)
from .simlab import (CONVENTIONS, METHODS, SCENARIOS, SimStudyConfig,
                     generate_benchmark, metrics_to_csv, run_replicates,
                     summarize_metrics, true_value)
from .tabular import (BINARY, CATEGORICAL, CONTINUOUS, DataError, FeatureFormula,
                      RoleMap, load_csv, write_csv)


class SchemaError(Exception):
    """A config file does not match the expected shape."""


def _check_keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be a JSON object")
    for k in required:
        if k not in obj:
            raise SchemaError(f"{where} is missing required key {k!r}")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise SchemaError(f"{where} has unknown keys: {', '.join(map(repr, unknown))}")


def _as_str(v, where, choices=None):
    if not isinstance(v, str):
        raise SchemaError(f"{where} must be a string")
    if choices is not None and v not in choices:
        raise SchemaError(f"{where} must be one of {sorted(choices)}, got {v!r}")
    return v


def _as_int(v, where, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{where} must be an integer")
    if lo is not None and v < lo:
        raise SchemaError(f"{where} must be >= {lo}")
    if hi is not None and v > hi:
        raise SchemaError(f"{where} must be <= {hi}")
    return v


def _as_num(v, where, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where} must be a number")
    v = float(v)
    if lo is not None and v < lo:
        raise SchemaError(f"{where} must be >= {lo}")
    if hi is not None and v > hi:
        raise SchemaError(f"{where} must be <= {hi}")
    return v


def _as_bool(v, where):
    if not isinstance(v, bool):
        raise SchemaError(f"{where} must be true or false")
    return v


def _as_str_list(v, where):
    if not isinstance(v, list) or any(not isinstance(x, str) for x in v):
        raise SchemaError(f"{where} must be a list of strings")
    return tuple(v)


def _parse_roles(obj) -> RoleMap:
    _check_keys(obj, "roles",
                required=("group", "reference", "system_factor",
                          "individual_factor", "outcome"),
                optional=("baseline", "pre_confounders",
                          "intermediate_confounders", "cluster"))
    ref = obj["reference"]
    if isinstance(ref, bool) or not isinstance(ref, (str, int, float)):
        raise SchemaError("roles.reference must be a string or a number")
    if isinstance(ref, (int, float)):
        ref = float(ref)
    cluster = obj.get("cluster")
    if cluster is not None:
        cluster = _as_str(cluster, "roles.cluster")
    return RoleMap(
        group=_as_str(obj["group"], "roles.group"),
        reference=ref,
        system_factor=_as_str(obj["system_factor"], "roles.system_factor"),
        individual_factor=_as_str(obj["individual_factor"], "roles.individual_factor"),
        outcome=_as_str(obj["outcome"], "roles.outcome"),
        baseline=_as_str_list(obj.get("baseline", []), "roles.baseline"),
        pre_confounders=_as_str_list(obj.get("pre_confounders", []),
                                     "roles.pre_confounders"),
        intermediate_confounders=_as_str_list(
            obj.get("intermediate_confounders", []),
            "roles.intermediate_confounders"),
        cluster=cluster,
    )


def _parse_factor_mode(obj, where):
    _check_keys(obj, where, required=("mode",), optional=("allowables", "level"))
    mode = _as_str(obj["mode"], f"{where}.mode",
                   choices=("equalize", "set_value", "no_change"))
    if mode == "equalize":
        if "level" in obj:
            raise SchemaError(f"{where}: 'level' only applies to set_value")
        return Equalize(_as_str_list(obj.get("allowables", []),
                                     f"{where}.allowables"))
    if "allowables" in obj:
        raise SchemaError(f"{where}: 'allowables' only applies to equalize")
    if mode == "set_value":
        return SetValue(_as_int(obj.get("level", -1), f"{where}.level", 0, 1))
    if "level" in obj:
        raise SchemaError(f"{where}: 'level' only applies to set_value")
    return NoChange()


def _parse_intervention(obj) -> InterventionSpec:
    _check_keys(obj, "intervention", required=(),
                optional=("sys", "ind", "integration", "n_draws", "seed",
                          "sys_plugin"))
    return InterventionSpec(
        sys=_parse_factor_mode(obj.get("sys", {"mode": "equalize"}),
                               "intervention.sys"),
        ind=_parse_factor_mode(obj.get("ind", {"mode": "equalize"}),
                               "intervention.ind"),
        integration=_as_str(obj.get("integration", MARGINALIZE),
                            "intervention.integration",
                            choices=(MARGINALIZE, DRAW)),
        n_draws=_as_int(obj.get("n_draws", 0), "intervention.n_draws", 0),
        seed=_as_int(obj.get("seed", 0), "intervention.seed"),
        sys_plugin=_as_str(obj.get("sys_plugin", PLUGIN_INTERVENED),
                           "intervention.sys_plugin",
                           choices=(PLUGIN_OBSERVED, PLUGIN_INTERVENED)),
    )


def _parse_gbt(obj, where) -> GbtParams:
    _check_keys(obj, where, required=(),
                optional=("n_trees", "learning_rate", "max_depth",
                          "min_child_weight", "l2_lambda", "subsample"))
    return GbtParams(
        n_trees=_as_int(obj.get("n_trees", 300), f"{where}.n_trees", 0),
        learning_rate=_as_num(obj.get("learning_rate", 0.05),
                              f"{where}.learning_rate"),
        max_depth=_as_int(obj.get("max_depth", 3), f"{where}.max_depth", 1),
        min_child_weight=_as_num(obj.get("min_child_weight", 10.0),
                                 f"{where}.min_child_weight", 0.0),
        l2_lambda=_as_num(obj.get("l2_lambda", 1.0), f"{where}.l2_lambda", 0.0),
        subsample=_as_num(obj.get("subsample", 1.0), f"{where}.subsample"),
    )


def _parse_formula(obj, where) -> FeatureFormula:
    _check_keys(obj, where, required=("terms",), optional=("intercept",))
    if not isinstance(obj["terms"], list):
        raise SchemaError(f"{where}.terms must be a list")
    for i, raw in enumerate(obj["terms"]):
        tw = f"{where}.terms[{i}]"
        if not isinstance(raw, list) or not raw or not isinstance(raw[0], str):
            raise SchemaError(f"{tw} must be a list starting with a term tag")
        tag = raw[0]
        if tag in ("col", "center"):
            if len(raw) != 2 or not isinstance(raw[1], str):
                raise SchemaError(f"{tw}: expected ['{tag}', column]")
        elif tag == "inter":
            if (len(raw) != 2 or not isinstance(raw[1], list)
                    or not 2 <= len(raw[1]) <= 3
                    or any(not isinstance(c, str) for c in raw[1])):
                raise SchemaError(f"{tw}: expected ['inter', [col, col(, col)]]")
        elif tag == "transform":
            if (len(raw) != 3 or not isinstance(raw[1], str)
                    or not isinstance(raw[2], list)
                    or any(not isinstance(c, str) for c in raw[2])):
                raise SchemaError(f"{tw}: expected ['transform', name, [cols]]")
        else:
            raise SchemaError(f"{tw}: unknown term tag {tag!r}")
    if "intercept" in obj:
        _as_bool(obj["intercept"], f"{where}.intercept")
    try:
        formula = FeatureFormula.from_json_obj(obj)
        formula.validate()
    except DataError as e:
        raise SchemaError(f"{where}: {e}") from e
    return formula


def _parse_model(obj, where) -> ModelSpec:
    _check_keys(obj, where, required=("family", "formula"),
                optional=("gbt", "seed"))
    family = _as_str(obj["family"], f"{where}.family", choices=FAMILIES)
    gbt = None
    if "gbt" in obj:
        gbt = _parse_gbt(obj["gbt"], f"{where}.gbt")
    spec = ModelSpec(family, _parse_formula(obj["formula"], f"{where}.formula"),
                     gbt=gbt, seed=_as_int(obj.get("seed", 0), f"{where}.seed"))
    try:
        spec.validate()
    except DataError as e:
        raise SchemaError(f"{where}: {e}") from e
    return spec


def _parse_models(obj) -> NuisanceSpecs:
    _check_keys(obj, "models",
                required=("prop_sys", "prop_ind", "outcome", "nested"))
    specs = NuisanceSpecs(
        prop_sys=_parse_model(obj["prop_sys"], "models.prop_sys"),
        prop_ind=_parse_model(obj["prop_ind"], "models.prop_ind"),
        outcome=_parse_model(obj["outcome"], "models.outcome"),
        nested=_parse_model(obj["nested"], "models.nested"),
    )
    try:
        specs.validate()
    except DataError as e:
        raise SchemaError(f"models: {e}") from e
    return specs


def _parse_estimators(v):
    names = _as_str_list(v, "estimators")
    if not names:
        raise SchemaError("estimators must not be empty")
    for name in names:
        if name not in ESTIMATORS:
            raise SchemaError(f"unknown estimator {name!r}; "
                              f"choose from {list(ESTIMATORS)}")
    return names


def _parse_trim(v):
    if v is None:
        return None
    if (not isinstance(v, list) or len(v) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float))
                   for x in v)):
        raise SchemaError("trim must be [low_pct, high_pct]")
    lo, hi = float(v[0]), float(v[1])
    if not 0.0 <= lo < hi <= 100.0:
        raise SchemaError("trim percentiles must satisfy 0 <= low < high <= 100")
    return (lo, hi)


def _parse_kinds(obj):
    if not isinstance(obj, dict):
        raise SchemaError("kinds must be an object mapping column to kind")
    out = {}
    for col, kind in obj.items():
        out[col] = _as_str(kind, f"kinds.{col}",
                           choices=(CONTINUOUS, BINARY, CATEGORICAL))
    return out


def _read_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise SchemaError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"config {path} is not valid JSON: {e}") from e


def _write_text(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_analyze(args) -> int:
    cfg_obj = _read_config(args.config)
    _check_keys(cfg_obj, "config",
                required=("data", "roles", "models"),
                optional=("missing", "kinds", "intervention", "estimators",
                          "crossfit_k", "cluster_folds", "normalize_weights",
                          "trim", "stratum", "seed", "bootstrap"))
    roles = _parse_roles(cfg_obj["roles"])
    specs = _parse_models(cfg_obj["models"])
    intervention = _parse_intervention(cfg_obj.get("intervention", {}))
    try:
        intervention.validate(roles)
    except DataError as e:
        raise SchemaError(f"intervention: {e}") from e
    estimators = _parse_estimators(cfg_obj.get("estimators", list(ESTIMATORS)))
    crossfit_k = _as_int(cfg_obj.get("crossfit_k", 0), "crossfit_k", 0)
    if crossfit_k == 1:
        raise SchemaError("crossfit_k must be 0 (off) or at least 2")
    cluster_folds = _as_bool(cfg_obj.get("cluster_folds", False), "cluster_folds")
    normalize = _as_bool(cfg_obj.get("normalize_weights", False),
                         "normalize_weights")
    trim = _parse_trim(cfg_obj.get("trim"))
    stratum = None
    if cfg_obj.get("stratum") is not None:
        sobj = cfg_obj["stratum"]
        _check_keys(sobj, "stratum", required=("column", "level"))
        level = sobj["level"]
        if isinstance(level, bool) or not isinstance(level, (str, int, float)):
            raise SchemaError("stratum.level must be a string or a number")
        if isinstance(level, (int, float)):
            level = float(level)
        stratum = (_as_str(sobj["column"], "stratum.column"), level)
    seed = _as_int(cfg_obj.get("seed", 0), "seed")
    missing = _as_str(cfg_obj.get("missing", "error"), "missing",
                      choices=("error", "drop"))
    kinds = _parse_kinds(cfg_obj["kinds"]) if "kinds" in cfg_obj else None
    boot = cfg_obj.get("bootstrap")
    if boot is not None:
        _check_keys(boot, "bootstrap", required=("replicates",),
                    optional=("cluster", "level"))
        b = _as_int(boot["replicates"], "bootstrap.replicates", 1)
        boot_cluster = _as_bool(boot.get("cluster", False), "bootstrap.cluster")
        level = _as_num(boot.get("level", 0.95), "bootstrap.level")
        if not 0.0 < level < 1.0:
            raise SchemaError("bootstrap.level must be strictly between 0 and 1")
    data_path = _as_str(cfg_obj["data"], "data")

    ds, load_report = load_csv(data_path, kinds=kinds, missing=missing)
    roles.validate(ds)
    if boot is not None and boot_cluster and roles.cluster is None:
        raise DataError("clustered bootstrap needs roles.cluster")
    cfg = AnalysisConfig(roles=roles, intervention=intervention, specs=specs,
                         estimators=estimators, crossfit_k=crossfit_k,
                         cluster_folds=cluster_folds, normalize=normalize,
                         trim=trim, stratum=stratum, seed=seed)

    if boot is None:
        records, _ = run_analysis(ds, cfg, fold_seed=seed)
        rows = []
        for rec in records:
            for quantity in ("disparity", "reduction", "remaining"):
                rows.append({
                    "group": rec.group_level, "estimator": rec.estimator,
                    "quantity": quantity, "estimate": getattr(rec, quantity),
                    "se": None, "t_value": None, "p_value": None,
                    "ci_low": None, "ci_high": None,
                    "pct_reduction": (rec.pct_reduction
                                      if quantity == "reduction" else None),
                })
        report = InferenceReport(rows, 0, 0, 0, False, 0.95, seed)
    else:
        result = bootstrap_analysis(ds, cfg, b, clustered=boot_cluster,
                                    jobs=args.jobs)
        report = summarize(result, level=level)

    _write_text(args.out, "report.json", report.to_json() + "\n")
    _write_text(args.out, "report.csv", report.to_csv())
    print(f"analyze: {len(report.rows)} rows written to {args.out} "
          f"(n={ds.n}, dropped={load_report.n_dropped_missing})")
    return 0


def cmd_simulate(args) -> int:
    cfg_obj = _read_config(args.config)
    _check_keys(cfg_obj, "config", required=("scenario",),
                optional=("method", "n", "replicates", "crossfit_k",
                          "estimators", "convention", "seed", "gbt",
                          "delta_true", "truth"))
    scenario = _as_int(cfg_obj["scenario"], "scenario")
    if scenario not in SCENARIOS:
        raise SchemaError(f"scenario must be one of {list(SCENARIOS)}")
    method = _as_str(cfg_obj.get("method", "glm"), "method", choices=METHODS)
    crossfit_k = _as_int(cfg_obj.get("crossfit_k", 0), "crossfit_k", 0)
    if crossfit_k == 1:
        raise SchemaError("crossfit_k must be 0 (off) or at least 2")
    estimators = _parse_estimators(cfg_obj.get("estimators", list(ESTIMATORS)))
    sim = SimStudyConfig(
        scenario=scenario,
        method=method,
        estimators=estimators,
        n=_as_int(cfg_obj.get("n", 2000), "n", 2),
        replicates=_as_int(cfg_obj.get("replicates", 200), "replicates", 1),
        crossfit_k=crossfit_k,
        convention=_as_str(cfg_obj.get("convention", "stratum"), "convention",
                           choices=CONVENTIONS),
        seed=_as_int(cfg_obj.get("seed", 0), "seed"),
        gbt=_parse_gbt(cfg_obj["gbt"], "gbt") if "gbt" in cfg_obj else None,
    )
    truth_info = {}
    if "delta_true" in cfg_obj:
        if "truth" in cfg_obj:
            raise SchemaError("give either delta_true or truth, not both")
        delta_true = _as_num(cfg_obj["delta_true"], "delta_true")
    else:
        tcfg = cfg_obj.get("truth", {})
        _check_keys(tcfg, "truth", required=(), optional=("n_draws", "seed"))
        truth = true_value(_as_int(tcfg.get("n_draws", 2_000_000),
                                   "truth.n_draws", 1000),
                           _as_int(tcfg.get("seed", 0), "truth.seed"),
                           convention=sim.convention)
        delta_true = truth.delta_true
        truth_info = {"truth_mc_se": truth.mc_se, "truth_n_draws": truth.n_draws,
                      "truth_seed": truth.seed}

    result = run_replicates(sim, jobs=args.jobs)
    metrics = summarize_metrics(result, delta_true)
    payload = {
        "scenario": sim.scenario, "method": sim.method, "n": sim.n,
        "replicates": sim.replicates, "crossfit_k": sim.crossfit_k,
        "convention": sim.convention, "seed": sim.seed,
        "delta_true": delta_true, "n_failed": result.n_failed,
        "estimators": metrics,
    }
    payload.update(truth_info)
    _write_text(args.out, "estimates.csv", result.to_csv())
    _write_text(args.out, "metrics.json",
                json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_text(args.out, "metrics.csv", metrics_to_csv(metrics, delta_true))
    print(f"simulate: {result.reductions.shape[0]} replicates kept, "
          f"{result.n_failed} failed; outputs in {args.out}")
    return 0


def cmd_oracle(args) -> int:
    cfg_obj = _read_config(args.config)
    _check_keys(cfg_obj, "config", required=(),
                optional=("n_draws", "seed", "convention", "null_intervention"))
    report = true_value(
        _as_int(cfg_obj.get("n_draws", 2_000_000), "n_draws", 1000),
        _as_int(cfg_obj.get("seed", 0), "seed"),
        convention=_as_str(cfg_obj.get("convention", "stratum"), "convention",
                           choices=CONVENTIONS),
        null_intervention=_as_bool(cfg_obj.get("null_intervention", False),
                                   "null_intervention"),
    )
    _write_text(args.out, "truth.json", report.to_json() + "\n")
    print(f"oracle: delta_true={report.delta_true:.4f} "
          f"(mc_se={report.mc_se:.4f}) written to {args.out}")
    return 0


def cmd_generate(args) -> int:
    cfg_obj = _read_config(args.config)
    _check_keys(cfg_obj, "config", required=("n",), optional=("seed",))
    n = _as_int(cfg_obj["n"], "n", 1)
    seed = _as_int(cfg_obj.get("seed", 0), "seed")
    ds = generate_benchmark(n, seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(ds, os.path.join(args.out, "data.csv"))
    meta = {"n": n, "seed": seed, "columns": list(ds.columns)}
    _write_text(args.out, "meta.json",
                json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"generate: {n} rows written to {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapdecomp",
        description="Causal decomposition of group disparities under joint "
                    "interventions on a system-level and an individual-level factor.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (
            ("analyze", cmd_analyze, "decompose a disparity on a CSV dataset"),
            ("simulate", cmd_simulate, "Monte Carlo study on the benchmark process"),
            ("oracle", cmd_oracle, "Monte Carlo truth of the benchmark reduction"),
            ("generate", cmd_generate, "draw a dataset from the benchmark process")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        if name in ("analyze", "simulate"):
            p.add_argument("--jobs", type=int, default=1,
                           help="worker processes for replicate loops")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (EstimationError, np.linalg.LinAlgError) as e:
        print(f"estimation error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
