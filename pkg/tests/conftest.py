"""Shared test helpers: tiny mixed-model fixtures, gradient checking,
and the simulate/fit/evaluate scenario runner used by the acceptance
suite."""

import warnings

import numpy as np
from scipy.special import expit

from omerf.clmm import RandomEffectsSpec, conditional_loglik, conditional_loglik_grad, \
    fit_clmm
from omerf.core import build_dataset, category_probs
from omerf.estimator import OmerfConfig, fit_omerf, predict_dataset
from omerf.forest import ForestConfig, permutation_importance
from omerf.metrics import evaluate
from omerf.sim import DgpSpec, generate


def tiny_fixture(seed):
    """I=2, n_i=5, C=3 random-intercept data; None when a group shows
    fewer than 2 categories or a category never occurs at all."""
    rng = np.random.default_rng(seed)
    theta = np.array([-0.8, 0.9])
    b = rng.normal(0, 1.5, 2)
    y, g = [], []
    for i in range(2):
        gam = expit(theta - b[i])
        yi = (rng.random(5)[:, None] > gam[None, :]).sum(1) + 1
        if np.unique(yi).size < 2:
            return None
        y.extend(yi)
        g.extend([f"g{i}"] * 5)
    if len(set(y)) < 3:
        return None
    return build_dataset(np.zeros((10, 1)), g, np.array(y), n_categories=3)


def tiny_fixtures(n=10):
    out, seed = [], 0
    while len(out) < n:
        data = tiny_fixture(seed)
        if data is not None:
            out.append(data)
        seed += 1
    return out


def as_oracle_groups(data):
    return [(np.zeros(int(np.sum(data.group == i))), data.y[data.group == i])
            for i in range(1, data.n_groups + 1)]


def gradient_discrepancies(n_configs, seed=1):
    """Worst relative gap between analytic and central-difference
    gradients of the conditional log-likelihood, per random config."""
    rng = np.random.default_rng(seed)
    worst = []
    for _ in range(n_configs):
        n = int(rng.integers(8, 40))
        n_cat = int(rng.integers(2, 5))
        n_feat = int(rng.integers(1, 4))
        n_groups = int(rng.integers(1, 4))
        y = rng.integers(1, n_cat + 1, n)
        y[:n_cat] = np.arange(1, n_cat + 1)
        x = rng.normal(size=(n, n_feat))
        groups = [f"g{i}" for i in rng.integers(0, n_groups, n)]
        data = build_dataset(x, groups, y, n_categories=n_cat)
        theta = np.sort(rng.normal(0, 1.5, n_cat - 1)) + np.arange(n_cat - 1) * 1e-3
        beta = rng.normal(0, 0.8, n_feat)
        b = rng.normal(0, 0.8, (data.n_groups, 1))
        offset = rng.normal(0, 0.5, n)

        g_theta, g_beta, g_b = conditional_loglik_grad(theta, beta, b, data, offset)
        analytic = np.concatenate([g_theta, g_beta, g_b[:, 0]])

        def shifted(vec, k, h, size, which):
            e = np.zeros(size)
            e[k] = h
            if which == "theta":
                return conditional_loglik(theta + e, beta, b, data, offset)
            if which == "beta":
                return conditional_loglik(theta, beta + e, b, data, offset)
            return conditional_loglik(theta, beta, b + e[:, None], data, offset)

        fd = []
        for which, size in (("theta", n_cat - 1), ("beta", n_feat),
                            ("b", data.n_groups)):
            for k in range(size):
                hi = shifted(None, k, 1e-6, size, which)
                lo = shifted(None, k, -1e-6, size, which)
                fd.append((hi - lo) / 2e-6)
        fd = np.asarray(fd)
        worst.append(float(np.max(np.abs(analytic - fd) / (1.0 + np.abs(fd)))))
    return np.asarray(worst)


def run_scenario(dgp_id, rep, num_trees=500, with_importance=False,
                 with_bcorr=False):
    """One replication: simulate, split, fit OMERF and the mixed-model
    baseline, score the test part. Returns a flat result dict."""
    spec = DgpSpec.from_id(dgp_id, seed=dgp_id * 1000 + rep)
    sim = generate(spec)
    train, test = sim.train(), sim.test()
    re_spec = RandomEffectsSpec(q_slopes=1 if spec.has_slope else 0)
    config = OmerfConfig(forest_config=ForestConfig(num_trees=num_trees, seed=rep))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_omerf(train, re_spec, config)
        _, omerf_pred = predict_dataset(model, test)
        omerf_rep = evaluate(test.y, omerf_pred, model="omerf")

        clmm_fit = fit_clmm(train, re_spec, fixed_effects=True)
        lam = clmm_fit.linear_scores_mixed(test)
        clmm_pred = np.argmax(category_probs(clmm_fit.theta, lam), axis=1) + 1
        clmm_rep = evaluate(test.y, clmm_pred, model="clmm")

    out = {
        "dgp": dgp_id,
        "rep": rep,
        "omerf_acc": omerf_rep.accuracy,
        "omerf_mse": omerf_rep.mse,
        "clmm_acc": clmm_rep.accuracy,
        "clmm_mse": clmm_rep.mse,
        "converged": model.converged,
    }
    if with_importance:
        imp = permutation_importance(model.forest, train.x, model.forest_target,
                                     repeats=5, seed=rep)
        ranks = np.empty(7, dtype=int)
        ranks[np.argsort(-imp, kind="stable")] = np.arange(1, 8)
        out["x7_rank"] = int(ranks[6])
    if with_bcorr:
        out["b_corr"] = float(np.corrcoef(model.clmm.b_modes[:, 0],
                                          sim.b_true[:, 0])[0, 1])
    return out
