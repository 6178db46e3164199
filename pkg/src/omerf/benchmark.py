"""Replicated simulate / split / fit / evaluate harness over the ten
data-generating scenarios, with deterministic per-replication seeds and
a separate aggregation pass."""

from __future__ import annotations

import csv
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .clmm import RandomEffectsSpec, fit_clm, fit_clmm
from .core import category_probs
from .estimator import OmerfConfig, OrdinalInitializer, fit_omerf, predict_dataset
from .metrics import evaluate, mean_and_variance
from .sim import DGP_TABLE, DgpSpec, generate

KNOWN_MODELS = ("clm", "clmm", "ordforest-init", "omerf")
METRIC_ORDER = ("accuracy", "mse", "ari", "kappa")


@dataclass(frozen=True)
class BenchmarkPlan:
    """Which scenarios to run, how often, and with which models."""

    dgp_ids: tuple
    replications: int
    models: tuple = KNOWN_MODELS
    split_ratio: float = 0.8
    seed: int = 0
    omerf_config: OmerfConfig = field(default_factory=OmerfConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least 1 replication")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split ratio must lie in (0, 1)")
        for dgp in self.dgp_ids:
            if dgp not in DGP_TABLE:
                raise ValueError(f"dgp id must be in 1..10, got {dgp}")
        for model in self.models:
            if model not in KNOWN_MODELS:
                raise ValueError(f"unknown model {model!r}; choose from {KNOWN_MODELS}")


def replication_seeds(master_seed, dgp_id, rep):
    """Four derived 63-bit seeds: data, omerf forest, initializer forest,
    importance stream."""
    ss = np.random.SeedSequence(entropy=[int(master_seed), int(dgp_id), int(rep)])
    state = ss.generate_state(4, np.uint64)
    return [int(s >> np.uint64(1)) for s in state]


def _predict_clm(fit, data):
    lam = fit.linear_scores(data.x)
    probs = category_probs(fit.theta, lam)
    return np.argmax(probs, axis=1) + 1


def _predict_clmm(fit, data):
    lam = fit.linear_scores_mixed(data)
    probs = category_probs(fit.theta, lam)
    return np.argmax(probs, axis=1) + 1


def run_single_replication(plan, dgp_id, rep):
    """One (dgp, rep) cell: generate, split, fit every model on the
    training part and score the test part. Returns (reports, failures)."""
    data_seed, omerf_seed, init_seed, _ = replication_seeds(plan.seed, dgp_id, rep)
    spec = DgpSpec.from_id(dgp_id, seed=data_seed)
    sim = generate(spec, train_ratio=plan.split_ratio)
    train, test = sim.train(), sim.test()
    re_spec = RandomEffectsSpec(q_slopes=1 if spec.has_slope else 0)
    tag = f"dgp{dgp_id}"

    reports, failures = [], []
    for model in plan.models:
        try:
            if model == "clm":
                fit = fit_clm(train)
                pred = _predict_clm(fit, test)
            elif model == "clmm":
                fit = fit_clmm(train, re_spec, fixed_effects=True)
                pred = _predict_clmm(fit, test)
            elif model == "ordforest-init":
                fc = replace(plan.omerf_config.forest_config, seed=init_seed)
                init = OrdinalInitializer().fit(train.x, train.y, train.n_categories,
                                                forest_config=fc)
                pred = init.predict(test.x)
            else:
                fc = replace(plan.omerf_config.forest_config, seed=omerf_seed)
                config = replace(plan.omerf_config, forest_config=fc)
                fitted = fit_omerf(train, re_spec, config)
                _, pred = predict_dataset(fitted, test)
            report = evaluate(test.y, pred, model=model, dataset=tag)
            reports.append({"dgp": dgp_id, "rep": rep, "model": model,
                            **report.metric_values(), "n": report.n})
        except Exception as exc:  # recorded, the run continues
            failures.append({"dgp": dgp_id, "rep": rep, "model": model,
                             "error": f"{type(exc).__name__}: {exc}",
                             "trace": traceback.format_exc(limit=3)})
    return reports, failures


def aggregate_rows(rep_rows):
    """(dgp, model, metric, mean, variance) rows in Table layout order."""
    keys = sorted({(r["dgp"], r["model"]) for r in rep_rows})
    out = []
    for dgp, model in keys:
        cell = [r for r in rep_rows if r["dgp"] == dgp and r["model"] == model]
        for metric in METRIC_ORDER:
            mean, var = mean_and_variance([r[metric] for r in cell])
            out.append({"dgp": dgp, "model": model, "metric": metric,
                        "mean": mean, "variance": var, "n_reps": len(cell)})
    return out


def run_benchmark(plan, n_threads=1):
    """All (dgp, rep) cells, optionally on a thread pool.

    Each cell depends only on its derived seed, and results are merged
    in task order, so the thread count never changes the output.
    """
    tasks = [(dgp, rep) for dgp in plan.dgp_ids for rep in range(plan.replications)]
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            cells = list(pool.map(lambda t: run_single_replication(plan, *t), tasks))
    else:
        cells = [run_single_replication(plan, *t) for t in tasks]
    rep_rows, failures = [], []
    for reports, fails in cells:
        rep_rows.extend(reports)
        failures.extend(fails)
    return rep_rows, aggregate_rows(rep_rows), failures


def write_replication_csv(path, rep_rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dgp", "rep", "model"] + list(METRIC_ORDER) + ["n"])
        for r in rep_rows:
            writer.writerow([r["dgp"], r["rep"], r["model"]] +
                            [repr(float(r[m])) for m in METRIC_ORDER] + [r["n"]])


def write_aggregate_csv(path, agg_rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dgp", "model", "metric", "mean", "variance", "n_reps"])
        for r in agg_rows:
            writer.writerow([r["dgp"], r["model"], r["metric"],
                             repr(float(r["mean"])), repr(float(r["variance"])),
                             r["n_reps"]])


def write_failures_csv(path, failures):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dgp", "rep", "model", "error"])
        for r in failures:
            writer.writerow([r["dgp"], r["rep"], r["model"], r["error"]])
