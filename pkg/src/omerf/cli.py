"""Batch command line: simulate, fit, predict, evaluate, benchmark and
explain, with manifest-based reproducibility.

Exit codes: 0 success, 1 I/O failure, 2 validation or usage error,
3 fit non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench
from .clmm import ClmFit, ClmmFit, FitError, RandomEffectsSpec, fit_clm, fit_clmm, icc
from .core import Schema, ValidationError, category_probs, load_dataset, load_design
from .estimator import (OmerfConfig, OmerfModel, extract_random_effects, fit_omerf,
                        predict_omerf)
from .forest import (ForestConfig, default_grid, partial_dependence,
                     permutation_importance, write_importance_csv,
                     write_partial_dependence_csv)
from .metrics import evaluate as evaluate_metrics
from .sim import DgpSpec, generate, write_dataset_csv, write_split_json, write_truth_json

MANIFEST_VERSION = 1

_FOREST_KEYS = ("num_trees", "mtry", "min_node_size", "bootstrap", "max_depth")
_OMERF_KEYS = ("toll", "itmax", "denominator_floor", "oob_offset")


def _dump_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc


def _resolve_params(defaults, args, extra_flag_names):
    """defaults < config file < explicitly set flags."""
    params = dict(defaults)
    if args.config:
        doc = _load_json(args.config)
        if "params" in doc and "command" in doc:  # a manifest
            if doc["command"] != args.command:
                raise ValidationError(
                    f"manifest is for '{doc['command']}', not '{args.command}'")
            doc = doc["params"]
        unknown = set(doc) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        params.update(doc)
    for name in extra_flag_names:
        flag_val = getattr(args, name.replace("-", "_"), None)
        if flag_val is not None:
            params[name] = flag_val
    if args.seed is not None:
        params["seed"] = args.seed
    if args.out is not None:
        params["out"] = args.out
    if getattr(args, "threads", None) is not None:
        params["threads"] = args.threads
    return params


def _write_manifest(out_dir, command, params):
    _dump_json(out_dir / "manifest.json",
               {"version": MANIFEST_VERSION, "command": command, "params": params})


def _out_dir(params):
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _forest_config(params, seed):
    return ForestConfig(seed=seed, **{k: params[k] for k in _FOREST_KEYS})


def _omerf_config(params, seed):
    return OmerfConfig(forest_config=_forest_config(params, seed),
                       **{k: params[k] for k in _OMERF_KEYS})


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_SIM_DEFAULTS = {"dgp": None, "seed": 0, "out": ".", "train_ratio": 0.8}


def cmd_simulate(args):
    params = _resolve_params(_SIM_DEFAULTS, args, ["dgp", "train_ratio"])
    if params["dgp"] is None:
        raise ValidationError("simulate requires --dgp")
    spec = DgpSpec.from_id(int(params["dgp"]), seed=int(params["seed"]))
    sim = generate(spec, train_ratio=float(params["train_ratio"]))
    out = _out_dir(params)
    write_dataset_csv(out / "dataset.csv", sim.dataset)
    write_truth_json(out / "truth.json", sim)
    write_split_json(out / "split.json", sim)
    schema = {
        "label": "y", "group": "group",
        "fixed": list(sim.dataset.feature_names),
        "random_slopes": list(sim.dataset.slope_names),
    }
    _dump_json(out / "schema.json", schema)
    _write_manifest(out, "simulate", params)
    print(f"wrote {sim.dataset.n_obs} rows to {out / 'dataset.csv'}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

_FIT_DEFAULTS = {
    "model": None, "data": None, "schema": None, "seed": 0, "out": ".", "threads": 1,
    "num_trees": 500, "mtry": None, "min_node_size": 5, "bootstrap": True,
    "max_depth": None, "toll": 0.05, "itmax": 100, "denominator_floor": 1e-4,
    "oob_offset": False,
}


def _named_coefs(names, beta):
    return {name: float(v) for name, v in zip(names, beta)}


def cmd_fit(args):
    params = _resolve_params(_FIT_DEFAULTS, args, ["model", "data", "schema"])
    for key in ("model", "data", "schema"):
        if params[key] is None:
            raise ValidationError(f"fit requires --{key}")
    model = params["model"]
    if model not in ("clm", "clmm", "omerf"):
        raise ValidationError(f"unknown model {model!r}; choose clm, clmm or omerf")
    schema = Schema.from_json(params["schema"])
    data = load_dataset(params["data"], schema)
    out = _out_dir(params)
    threads = int(params["threads"])

    if model == "clm":
        fit = fit_clm(data)
        summary = {
            "model": "clm",
            "thresholds": fit.theta.tolist(),
            "coefficients": _named_coefs(fit.feature_names, fit.beta),
            "loglik": fit.loglik,
            "converged": fit.converged,
            "iterations": fit.n_iter,
            "separation_flag": fit.separation_flag,
        }
        payload = fit.to_dict()
    elif model == "clmm":
        spec = RandomEffectsSpec(q_slopes=len(schema.random_slopes))
        fit = fit_clmm(data, spec, fixed_effects=True)
        summary = {
            "model": "clmm",
            "thresholds": fit.theta.tolist(),
            "coefficients": _named_coefs(fit.feature_names, fit.beta),
            "sigma2": fit.sigma2.tolist(),
            "icc": icc(float(fit.sigma2[0])),
            "loglik": fit.marginal_loglik,
            "converged": fit.converged,
            "iterations": fit.n_iter,
            "n_groups": data.n_groups,
        }
        payload = fit.to_dict()
    else:
        spec = RandomEffectsSpec(q_slopes=len(schema.random_slopes))
        config = _omerf_config(params, int(params["seed"]))
        fit = fit_omerf(data, spec, config, n_threads=threads)
        summary = {
            "model": "omerf",
            "thresholds": fit.clmm.theta.tolist(),
            "sigma2": fit.clmm.sigma2.tolist(),
            "icc": icc(float(fit.clmm.sigma2[0])),
            "loglik": fit.clmm.marginal_loglik,
            "converged": fit.converged,
            "iterations": fit.iterations,
            "trace": [float(t) for t in fit.trace],
            "num_trees": fit.forest.config.num_trees,
        }
        payload = fit.to_dict()

    _dump_json(out / "model.json",
               {"version": MANIFEST_VERSION, "kind": model,
                "schema": schema.to_dict(), "model": payload})
    _dump_json(out / "summary.json", summary)
    _write_manifest(out, "fit", params)
    print(f"fitted {model}; converged={summary['converged']}")
    return 0


# ---------------------------------------------------------------------------
# predict / evaluate
# ---------------------------------------------------------------------------

def _load_model_doc(path):
    doc = _load_json(path)
    for key in ("kind", "schema", "model"):
        if key not in doc:
            raise ValidationError(f"{path}: not a model file")
    return doc


def _predict_doc(doc, x, z, group_labels):
    kind = doc["kind"]
    if kind == "clm":
        fit = ClmFit.from_dict(doc["model"])
        if x.shape[1] != fit.beta.size:
            raise ValidationError("feature count does not match the fitted model")
        lam = fit.linear_scores(x)
        probs = category_probs(fit.theta, lam)
    elif kind == "clmm":
        fit = ClmmFit.from_dict(doc["model"])
        if x.shape[1] != fit.beta.size:
            raise ValidationError("feature count does not match the fitted model")
        lookup = {str(lab): i for i, lab in enumerate(fit.group_labels)}
        b = np.zeros((x.shape[0], fit.b_modes.shape[1]))
        for j, lab in enumerate(group_labels):
            i = lookup.get(str(lab))
            if i is not None:
                b[j] = fit.b_modes[i]
        lam = x @ fit.beta + np.sum(z * b, axis=1)
        probs = category_probs(fit.theta, lam)
    elif kind == "omerf":
        model = OmerfModel.from_dict(doc["model"])
        return predict_omerf(model, x, z, group_labels)
    else:
        raise ValidationError(f"unsupported model type {kind!r}")
    return probs, np.argmax(probs, axis=1) + 1


_PREDICT_DEFAULTS = {"model_file": None, "data": None, "out": ".", "seed": 0}


def cmd_predict(args):
    params = _resolve_params(_PREDICT_DEFAULTS, args, ["model_file", "data"])
    for key in ("model_file", "data"):
        if params[key] is None:
            raise ValidationError(f"predict requires --{key.replace('_', '-')}")
    doc = _load_model_doc(params["model_file"])
    schema = Schema.from_dict(doc["schema"])
    x, z, groups, _ = load_design(params["data"], schema)
    probs, classes = _predict_doc(doc, x, z, groups)
    out = _out_dir(params)
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "class"] + [f"pi{c + 1}" for c in range(probs.shape[1])])
        for j in range(probs.shape[0]):
            writer.writerow([j, int(classes[j])] + [repr(float(p)) for p in probs[j]])
    _write_manifest(out, "predict", params)
    print(f"wrote {probs.shape[0]} predictions")
    return 0


_EVAL_DEFAULTS = {"model_file": None, "data": None, "out": ".", "seed": 0}


def cmd_evaluate(args):
    params = _resolve_params(_EVAL_DEFAULTS, args, ["model_file", "data"])
    for key in ("model_file", "data"):
        if params[key] is None:
            raise ValidationError(f"evaluate requires --{key.replace('_', '-')}")
    doc = _load_model_doc(params["model_file"])
    schema = Schema.from_dict(doc["schema"])
    x, z, groups, y = load_design(params["data"], schema)
    if y is None:
        raise ValidationError(f"column '{schema.label}' is required for evaluation")
    _, classes = _predict_doc(doc, x, z, groups)
    report = evaluate_metrics(y, classes, model=doc["kind"],
                              dataset=Path(params["data"]).name)
    out = _out_dir(params)
    _dump_json(out / "metrics.json", report.to_dict())
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "model", "metric", "value"])
        for metric, value in report.metric_values().items():
            writer.writerow([report.dataset, report.model, metric, repr(float(value))])
    _write_manifest(out, "evaluate", params)
    print(f"accuracy={report.accuracy:.4f} mse={report.mse:.4f} "
          f"ari={report.ari:.4f} kappa={report.kappa:.4f}")
    return 0


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

_BENCH_DEFAULTS = {
    "dgps": None, "reps": None, "models": ",".join(bench.KNOWN_MODELS),
    "ratio": 0.8, "seed": 0, "out": ".", "threads": 1,
    "num_trees": 500, "mtry": None, "min_node_size": 5, "bootstrap": True,
    "max_depth": None, "toll": 0.05, "itmax": 100, "denominator_floor": 1e-4,
    "oob_offset": False,
}


def _parse_listish(value, cast):
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    return tuple(cast(v.strip()) for v in str(value).split(",") if v.strip())


def cmd_benchmark(args):
    params = _resolve_params(_BENCH_DEFAULTS, args, ["dgps", "reps", "models", "ratio"])
    if params["dgps"] is None or params["reps"] is None:
        raise ValidationError("benchmark requires --dgps and --reps")
    try:
        plan = bench.BenchmarkPlan(
            dgp_ids=_parse_listish(params["dgps"], int),
            replications=int(params["reps"]),
            models=_parse_listish(params["models"], str),
            split_ratio=float(params["ratio"]),
            seed=int(params["seed"]),
            omerf_config=_omerf_config(params, 0),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    rep_rows, agg_rows, failures = bench.run_benchmark(
        plan, n_threads=int(params["threads"]))
    out = _out_dir(params)
    bench.write_replication_csv(out / "replications.csv", rep_rows)
    bench.write_aggregate_csv(out / "aggregate.csv", agg_rows)
    bench.write_failures_csv(out / "failures.csv", failures)
    _write_manifest(out, "benchmark", params)
    print(f"{len(rep_rows)} model evaluations, {len(failures)} failures; "
          f"aggregate in {out / 'aggregate.csv'}")
    return 0


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

_EXPLAIN_DEFAULTS = {"model_file": None, "data": None, "out": ".", "seed": 0,
                     "repeats": 5, "grid_points": 20}


def cmd_explain(args):
    params = _resolve_params(_EXPLAIN_DEFAULTS, args, ["model_file", "data"])
    for key in ("model_file", "data"):
        if params[key] is None:
            raise ValidationError(f"explain requires --{key.replace('_', '-')}")
    doc = _load_model_doc(params["model_file"])
    kind = doc["kind"]
    out = _out_dir(params)
    if kind == "clmm":
        fit = ClmmFit.from_dict(doc["model"])
        _write_random_effects_csv(out / "random_effects.csv", extract_random_effects(fit))
        _write_manifest(out, "explain", params)
        print("wrote random_effects.csv (no forest in a clmm model)")
        return 0
    if kind != "omerf":
        raise ValidationError(f"explain supports omerf or clmm models, not {kind!r}")

    model = OmerfModel.from_dict(doc["model"])
    schema = Schema.from_dict(doc["schema"])
    x, _, _, _ = load_design(params["data"], schema)
    if x.shape[0] != model.forest_target.size:
        raise ValidationError(
            "explain needs the training data file (row count mismatch)")
    imp = permutation_importance(model.forest, x, model.forest_target,
                                 repeats=int(params["repeats"]),
                                 seed=int(params["seed"]))
    names = model.feature_names or [f"x{k + 1}" for k in range(x.shape[1])]
    write_importance_csv(out / "importance.csv", names, imp)
    pd_rows = []
    for p, name in enumerate(names):
        grid, vals = partial_dependence(model.forest, x, p,
                                        default_grid(x, p, int(params["grid_points"])))
        pd_rows.extend((name, g, v) for g, v in zip(grid, vals))
    write_partial_dependence_csv(out / "partial_dependence.csv", pd_rows)
    _write_random_effects_csv(out / "random_effects.csv", extract_random_effects(model))
    _write_manifest(out, "explain", params)
    print("wrote importance.csv, partial_dependence.csv, random_effects.csv")
    return 0


def _write_random_effects_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "coef", "estimate", "sd", "lo", "hi"])
        for r in rows:
            writer.writerow([r["group"], r["coef"]] +
                            [repr(float(r[k])) for k in ("estimate", "sd", "lo", "hi")])


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--config", default=None,
                        help="JSON config or a previous run's manifest.json")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (never affects results)")

    parser = argparse.ArgumentParser(
        prog="omerf",
        description="Ordinal mixed-effects random forests: simulate, fit, "
                    "predict, evaluate, benchmark, explain.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a scenario dataset with ground truth")
    p.add_argument("--dgp", type=int, choices=range(1, 11), default=None)
    p.add_argument("--train-ratio", type=float, default=None)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a CSV")
    p.add_argument("--model", choices=("clm", "clmm", "omerf"), default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--schema", default=None)

    p = sub.add_parser("predict", parents=[common],
                       help="per-row class probabilities from a model file")
    p.add_argument("--model-file", dest="model_file", default=None)
    p.add_argument("--data", default=None)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a model file against labeled data")
    p.add_argument("--model-file", dest="model_file", default=None)
    p.add_argument("--data", default=None)

    p = sub.add_parser("benchmark", parents=[common],
                       help="replicated simulate/fit/evaluate table")
    p.add_argument("--dgps", default=None, help="comma-separated ids, e.g. 1,2,9")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--models", default=None,
                   help=f"comma-separated subset of {','.join(bench.KNOWN_MODELS)}")
    p.add_argument("--ratio", type=float, default=None)

    p = sub.add_parser("explain", parents=[common],
                       help="importance, partial dependence and group effects")
    p.add_argument("--model-file", dest="model_file", default=None)
    p.add_argument("--data", default=None)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "explain": cmd_explain,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
