"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line with the realized numbers.

Run with `pytest tests/test_acceptance.py -v -s`. The replicated
scenario runs are shared across criteria through session fixtures.
"""

import itertools
import json
import time
import warnings

import numpy as np
import pytest

from omerf.cli import main as cli_main
from omerf.clmm import RandomEffectsSpec, fit_clm, fit_clmm, laplace_marginal_loglik
from omerf.core import build_dataset
from omerf.metrics import adjusted_rand_index, cohens_kappa
from omerf.sim import DgpSpec, generate
from conftest import (as_oracle_groups, gradient_discrepancies, run_scenario,
                      tiny_fixtures)
from oracles import agh_fit, agh_marginal_loglik, ari_pair_counting, kappa_recomputed

N_REPS = 20


def _report(num, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="session")
def dgp1_runs():
    return [run_scenario(1, rep, with_importance=True) for rep in range(N_REPS)]


@pytest.fixture(scope="session")
def dgp2_runs():
    return [run_scenario(2, rep) for rep in range(N_REPS)]


@pytest.fixture(scope="session")
def dgp9_runs():
    return [run_scenario(9, rep) for rep in range(N_REPS)]


@pytest.fixture(scope="session")
def dgp3_runs():
    return [run_scenario(3, rep, with_bcorr=True) for rep in range(N_REPS)]


def test_criterion_1_metric_oracle_equivalence():
    t0 = time.time()
    checked = 0
    for length in range(2, 7):
        vectors = [np.asarray(v, dtype=np.int64)
                   for v in itertools.product((1, 2, 3), repeat=length)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for a in vectors:
                for b in vectors:
                    assert adjusted_rand_index(a, b) == ari_pair_counting(a, b)
                    assert cohens_kappa(a, b) == kappa_recomputed(a, b)
                    checked += 1
    elapsed = time.time() - t0
    _report(1, elapsed < 60.0,
            f"ARI and kappa equal brute-force oracles on all {checked} "
            f"label-vector pairs (C=3, length 2..6) in {elapsed:.1f}s (< 60s)")


def test_criterion_2_clmm_vs_quadrature():
    t0 = time.time()
    theta_eval = np.array([-0.8, 0.9])
    sigma_eval = 0.5
    worst_value = 0.0
    worst_theta = 0.0
    for data in tiny_fixtures(10):
        groups = as_oracle_groups(data)
        lap_value = laplace_marginal_loglik(theta_eval, None, np.log([sigma_eval]), data)
        agh_value = agh_marginal_loglik(theta_eval, sigma_eval, groups)
        worst_value = max(worst_value, abs(lap_value - agh_value) / abs(agh_value))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lap_fit = fit_clmm(data, RandomEffectsSpec(0), fixed_effects=False)
        start = [lap_fit.theta[0],
                 np.log(max(lap_fit.theta[1] - lap_fit.theta[0], 1e-3)),
                 0.5 * np.log(max(lap_fit.sigma2[0], 1e-6))]
        theta_agh, _ = agh_fit(groups, start)
        worst_theta = max(worst_theta, float(np.max(np.abs(lap_fit.theta - theta_agh))))
    elapsed = time.time() - t0
    ok = worst_value < 1e-3 and worst_theta < 0.05 and elapsed < 60.0
    _report(2, ok,
            f"10 tiny fixtures: worst value gap {worst_value:.2e} (< 1e-3), "
            f"worst fitted-threshold gap {worst_theta:.4f} (< 0.05), {elapsed:.1f}s")


def test_criterion_3_gradient_checks():
    t0 = time.time()
    worst = gradient_discrepancies(100)
    elapsed = time.time() - t0
    ok = float(worst.max()) < 1e-5 and elapsed < 30.0
    _report(3, ok,
            f"analytic vs central-difference gradients on 100 configs: "
            f"worst {worst.max():.2e} (< 1e-5), {elapsed:.1f}s")


def test_criterion_4_linear_recovery():
    target = np.array([7.0, -5.0, 1.0])
    worst = 0.0
    for seed in range(5):
        spec = DgpSpec.from_id(9, seed=seed, sigma2_intercept=0.0,
                               n_groups=10, group_size=2000)
        sim = generate(spec)
        x = sim.dataset.x
        design = np.column_stack([x[:, 0], x[:, 1], x[:, 1] * x[:, 2]])
        labels = [sim.dataset.group_labels[g - 1] for g in sim.dataset.group]
        data = build_dataset(design, labels, sim.dataset.y,
                             feature_names=["x1", "x2", "x2x3"], n_categories=3)
        fit = fit_clm(data)
        rel = np.max(np.abs(fit.beta - target) / np.abs(target))
        worst = max(worst, float(rel))
    _report(4, worst < 0.10,
            f"CLM slope recovery at J=20000 over 5 seeds: worst relative error "
            f"{worst:.3f} (< 0.10)")


def _mean(results, key):
    return float(np.mean([r[key] for r in results]))


def test_criterion_5_nonlinear_orderings(dgp1_runs, dgp2_runs):
    details = []
    ok = True
    for dgp_id, runs in ((1, dgp1_runs), (2, dgp2_runs)):
        acc_gap = _mean(runs, "omerf_acc") - _mean(runs, "clmm_acc")
        mse_gap = _mean(runs, "clmm_mse") - _mean(runs, "omerf_mse")
        ok = ok and acc_gap >= 0.02 and mse_gap > 0.0
        details.append(f"dgp {dgp_id}: accuracy gap {acc_gap:+.4f} (>= 0.02), "
                       f"mse improvement {mse_gap:+.4f} (> 0)")
    _report(5, ok, f"{N_REPS} replications; " + "; ".join(details))


def test_criterion_6_linear_regime_ordering(dgp9_runs):
    clmm_acc = _mean(dgp9_runs, "clmm_acc")
    omerf_acc = _mean(dgp9_runs, "omerf_acc")
    _report(6, clmm_acc >= omerf_acc,
            f"dgp 9 over {N_REPS} replications: mean accuracy clmm {clmm_acc:.4f} "
            f">= omerf {omerf_acc:.4f}")


def test_criterion_7_random_effect_recovery(dgp3_runs):
    corrs = np.array([r["b_corr"] for r in dgp3_runs])
    n_good = int(np.sum(corrs > 0.9))
    _report(7, n_good >= 18,
            f"dgp 3: corr(b_hat, b_true) > 0.9 in {n_good}/{N_REPS} replications "
            f"(need >= 18); median {np.median(corrs):.3f}")


def test_criterion_8_icc_formula():
    from omerf.clmm import icc
    value = icc(1.695)
    _report(8, abs(value - 0.340) <= 5e-4,
            f"icc(1.695) = {value:.6f} (0.340 within 5e-4)")


def test_criterion_9_irrelevant_variable(dgp1_runs):
    ranks = [r["x7_rank"] for r in dgp1_runs]
    n_last = sum(1 for r in ranks if r == 7)
    _report(9, n_last >= 15,
            f"x7 importance ranked last in {n_last}/{N_REPS} dgp-1 replications "
            f"(need >= 15)")


def test_criterion_10_benchmark_thread_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_trees": 50}), encoding="utf-8")
    outputs = {}
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        code = cli_main(["benchmark", "--dgps", "1", "--reps", "3",
                         "--models", "clm,clmm,omerf", "--seed", "21",
                         "--config", str(cfg), "--threads", str(threads),
                         "--out", str(out)])
        assert code == 0
        outputs[threads] = ((out / "aggregate.csv").read_bytes(),
                            (out / "replications.csv").read_bytes())
    ok = outputs[1] == outputs[8]
    _report(10, ok,
            "benchmark aggregate and per-replication CSVs byte-identical "
            "across 1-thread and 8-thread runs")
