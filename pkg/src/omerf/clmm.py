"""Cumulative link models for ordinal responses, with and without
group-level random effects.

The mixed model integrates the random effects out with a Laplace
approximation: an inner Newton solve finds each group's conditional
mode, and the outer parameters (reparameterized thresholds, optional
fixed coefficients, log standard deviations) are driven by a
quasi-Newton optimizer with central-difference gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import _clmmkern as _kern
from .core import (LOGISTIC_RESIDUAL_SD, ValidationError, check_thresholds,
                   clamp_prob, logit)

_LOG_SD_FLOOR = -12.0
_TINY_PROB = 1e-300
_INNER_GRAD_TOL = 1e-8
_INNER_MAX_ITER = 50
_INNER_MAX_HALVINGS = 30


class FitError(RuntimeError):
    """Optimizer failure; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class RandomEffectsSpec:
    """Random intercept plus ``q_slopes`` independent random slopes."""

    q_slopes: int = 0
    covariance_structure: str = "diagonal"

    def __post_init__(self):
        if self.q_slopes < 0:
            raise ValueError("q_slopes must be >= 0")
        if self.covariance_structure != "diagonal":
            raise ValueError("only the diagonal covariance structure is supported")

    @property
    def dim(self):
        return self.q_slopes + 1


# ---------------------------------------------------------------------------
# Conditional log-likelihood and its analytic derivatives
# ---------------------------------------------------------------------------

def _linear_predictor(data, theta, beta, b, offset):
    lam = np.zeros(data.n_obs) if offset is None else np.asarray(offset, float).copy()
    if beta is not None:
        lam += data.x @ np.asarray(beta, float)
    if b is not None:
        b = np.asarray(b, float)
        lam += np.sum(data.z * b[data.group - 1], axis=1)
    return lam


def _obs_terms(theta, lam, y):
    """Per-observation pieces of log pi_y and its lambda derivatives.

    Uses the sentinel thresholds -inf/+inf so boundary categories need
    no special casing: the logistic cdf/pdf vanish cleanly there.
    """
    c = theta.size + 1
    pad = np.concatenate(([-np.inf], theta, [np.inf]))
    au = pad[y] - lam
    al = pad[y - 1] - lam
    fu_cdf = expit(au)
    fl_cdf = expit(al)
    pi = np.maximum(fu_cdf - fl_cdf, _TINY_PROB)
    fu = fu_cdf * (1.0 - fu_cdf)
    fl = fl_cdf * (1.0 - fl_cdf)
    dfu = fu * (1.0 - 2.0 * fu_cdf)
    dfl = fl * (1.0 - 2.0 * fl_cdf)
    logpi = np.log(pi)
    dlam = (fl - fu) / pi
    curv = (dfu - dfl) / pi - dlam * dlam
    return c, logpi, dlam, curv, fu / pi, fl / pi


def _check_theta_matches(theta, data):
    theta = check_thresholds(theta)
    if theta.size != data.n_categories - 1:
        raise ValueError(f"expected {data.n_categories - 1} thresholds, got {theta.size}")
    return theta


def conditional_loglik(theta, beta, b, data, offset=None):
    """Sum of log category probabilities at fixed random effects.

    The linear predictor is x'beta + z'b_i + offset; pass ``beta=None``
    for offset-only models and ``b=None`` for no random effects.
    """
    theta = _check_theta_matches(theta, data)
    lam = _linear_predictor(data, theta, beta, b, offset)
    _, logpi, _, _, _, _ = _obs_terms(theta, lam, data.y)
    return float(np.sum(logpi))


def conditional_loglik_grad(theta, beta, b, data, offset=None):
    """Analytic gradient of :func:`conditional_loglik`.

    Returns (d/dtheta, d/dbeta, d/db) with None in the slots whose
    parameter was None.
    """
    theta = _check_theta_matches(theta, data)
    lam = _linear_predictor(data, theta, beta, b, offset)
    c, _, dlam, _, fu_pi, fl_pi = _obs_terms(theta, lam, data.y)
    g_theta = (np.bincount(data.y, weights=fu_pi, minlength=c + 1)[1:c]
               - np.bincount(data.y - 1, weights=fl_pi, minlength=c + 1)[1:c])
    g_beta = data.x.T @ dlam if beta is not None else None
    g_b = None
    if b is not None:
        d = data.z.shape[1]
        g_b = np.column_stack([
            np.bincount(data.group - 1, weights=data.z[:, q] * dlam,
                        minlength=data.n_groups)
            for q in range(d)
        ])
    return g_theta, g_beta, g_b


# ---------------------------------------------------------------------------
# Inner Newton for the conditional modes
# ---------------------------------------------------------------------------

def _solve_posdef_small(h, g):
    """Solve h @ delta = g for stacks of 1x1 or 2x2 matrices."""
    d = g.shape[1]
    if d == 1:
        return g / h[:, 0, 0][:, None]
    if d == 2:
        det = h[:, 0, 0] * h[:, 1, 1] - h[:, 0, 1] * h[:, 1, 0]
        out = np.empty_like(g)
        out[:, 0] = (h[:, 1, 1] * g[:, 0] - h[:, 0, 1] * g[:, 1]) / det
        out[:, 1] = (h[:, 0, 0] * g[:, 1] - h[:, 1, 0] * g[:, 0]) / det
        return out
    return np.linalg.solve(h, g[..., None])[..., 0]


def inner_newton_modes(theta, beta, sigma2, data, offset=None, start=None):
    """Per-group conditional modes of the random effects.

    Maximizes log p(y_i | b) + log N(b; 0, diag(sigma2)) by damped
    Newton, all groups advanced simultaneously. Returns
    (b_modes, curvatures, converged) where curvatures are the negative
    Hessians at the modes, one (Q+1)x(Q+1) block per group.
    """
    b, hess, converged, _ = _inner_newton(theta, beta, sigma2, data, offset, start)
    return b, hess, converged


def _inner_newton(theta, beta, sigma2, data, offset=None, start=None):
    theta = _check_theta_matches(theta, data)
    sigma2 = np.atleast_1d(np.asarray(sigma2, float))
    d = data.z.shape[1]
    n_groups = data.n_groups
    if sigma2.shape != (d,) or np.any(sigma2 <= 0.0):
        raise ValueError("sigma2 must be positive with one entry per random coefficient")
    g0 = np.ascontiguousarray(data.group - 1)
    base = _linear_predictor(data, theta, beta, None, offset)
    b = np.zeros((n_groups, d)) if start is None else np.asarray(start, float).copy()
    prec = 1.0 / sigma2
    pad = np.concatenate(([-np.inf], theta, [np.inf]))

    def stats(bcur):
        return _kern.group_stats(pad, data.y, base, data.z, g0, bcur, prec)

    obj, grad, hess = stats(b)
    active = np.linalg.norm(grad, axis=1) >= _INNER_GRAD_TOL
    for _ in range(_INNER_MAX_ITER):
        if not np.any(active):
            break
        delta = _solve_posdef_small(hess, grad)
        delta[~active] = 0.0
        b_try = b + delta
        obj_try, grad_try, hess_try = stats(b_try)
        # slack absorbs rounding noise once steps shrink to float precision
        slack = 1e-9 * (1.0 + np.abs(obj))
        scale = np.ones(n_groups)
        for _ in range(_INNER_MAX_HALVINGS):
            worse = active & (obj_try < obj - slack)
            if not np.any(worse):
                break
            scale[worse] *= 0.5
            b_try = b + scale[:, None] * delta
            obj_try, grad_try, hess_try = stats(b_try)
        else:
            stuck = active & (obj_try < obj - slack)
            b_try[stuck] = b[stuck]
            if np.any(stuck):
                obj_try, grad_try, hess_try = stats(b_try)
        keep = active[:, None]
        b = np.where(keep, b_try, b)
        obj = np.where(active, obj_try, obj)
        grad = np.where(keep, grad_try, grad)
        hess = np.where(active[:, None, None], hess_try, hess)
        active = np.linalg.norm(grad, axis=1) >= _INNER_GRAD_TOL
    converged = ~active
    return b, hess, converged, obj


def laplace_marginal_loglik(theta, beta, log_sd, data, offset=None):
    """Laplace-approximated marginal log-likelihood.

    ``log_sd`` holds unconstrained log standard deviations (floored at
    exp(-12)). Groups whose inner solve fails contribute a large
    penalty and a warning rather than an exception.
    """
    value, _, _, _ = _laplace_state(theta, beta, log_sd, data, offset)
    return value


def _laplace_state(theta, beta, log_sd, data, offset=None, start=None, warn=True):
    theta = _check_theta_matches(theta, data)
    log_sd = np.atleast_1d(np.asarray(log_sd, float))
    sigma2 = np.exp(2.0 * np.maximum(log_sd, _LOG_SD_FLOOR))
    b, curv, converged, joint = _inner_newton(theta, beta, sigma2, data,
                                              offset=offset, start=start)
    d = b.shape[1]
    if d == 1:
        logdet = np.log(curv[:, 0, 0])
    elif d == 2:
        det = curv[:, 0, 0] * curv[:, 1, 1] - curv[:, 0, 1] * curv[:, 1, 0]
        logdet = np.log(np.maximum(det, _TINY_PROB))
    else:
        logdet = np.array([np.linalg.slogdet(h)[1] for h in curv])
    # joint already holds sum log pi - quadratic form, per group
    value = float(np.sum(joint)
                  - 0.5 * data.n_groups * np.sum(np.log(sigma2))
                  - 0.5 * np.sum(logdet))
    n_failed = int(np.sum(~converged))
    if n_failed:
        if warn:
            warnings.warn(f"inner Newton failed for {n_failed} group(s); value penalized",
                          stacklevel=3)
        # penalty proportional to the residual so the objective stays
        # continuous at the convergence boundary
        g_theta, g_beta, g_b = conditional_loglik_grad(theta, beta, b, data, offset)
        resid = g_b - b / sigma2
        value -= min(1e8, 1e3 * float(np.sum(np.linalg.norm(resid[~converged], axis=1))))
    return value, b, curv, converged


# ---------------------------------------------------------------------------
# Threshold reparameterization and numerical outer gradients
# ---------------------------------------------------------------------------

def _encode_thresholds(theta):
    theta = check_thresholds(theta)
    if theta.size == 1:
        return theta.copy()
    return np.concatenate(([theta[0]], np.log(np.diff(theta))))


def _decode_thresholds(tpar):
    if tpar.size == 1:
        return tpar.copy()
    return tpar[0] + np.concatenate(([0.0], np.cumsum(np.exp(tpar[1:]))))


def _central_diff_grad(fun, x, rel_step=1e-6):
    g = np.empty(x.size)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


def _empirical_threshold_start(y, n_categories):
    counts = np.bincount(y, minlength=n_categories + 1)[1:]
    cum = np.cumsum(counts)[:-1] / y.size
    raw = logit(clamp_prob(cum))
    # enforce strict ordering even when a middle category is empty
    for k in range(1, raw.size):
        if raw[k] <= raw[k - 1]:
            raw[k] = raw[k - 1] + 1e-3
    return raw


# ---------------------------------------------------------------------------
# Fit results
# ---------------------------------------------------------------------------

@dataclass
class ClmFit:
    """Maximum likelihood CLM: thresholds and fixed coefficients."""

    theta: np.ndarray
    beta: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    grad_norm_scaled: float
    separation_flag: bool
    feature_names: list = field(default_factory=list)

    def linear_scores(self, x):
        return np.asarray(x, float) @ self.beta if self.beta.size else \
            np.zeros(np.asarray(x).shape[0])

    def to_dict(self):
        return {
            "kind": "clm",
            "theta": self.theta.tolist(),
            "beta": self.beta.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "grad_norm_scaled": self.grad_norm_scaled,
            "separation_flag": self.separation_flag,
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(theta=np.asarray(d["theta"], float), beta=np.asarray(d["beta"], float),
                   loglik=d["loglik"], converged=d["converged"], n_iter=d["n_iter"],
                   grad_norm_scaled=d["grad_norm_scaled"],
                   separation_flag=d["separation_flag"],
                   feature_names=list(d["feature_names"]))


@dataclass
class ClmmFit:
    """Laplace-fitted CLMM: thresholds, optional fixed coefficients,
    diagonal random-effect variances and per-group conditional modes."""

    theta: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    b_modes: np.ndarray
    b_sd: np.ndarray
    marginal_loglik: float
    offset_used: bool
    converged: bool
    n_iter: int
    n_starts_used: int
    group_labels: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)
    slope_names: list = field(default_factory=list)

    @property
    def coef_names(self):
        return ["intercept"] + list(self.slope_names)

    def linear_scores_mixed(self, data):
        """x'beta + z'b_i for a dataset sharing this fit's group index."""
        lam = np.zeros(data.n_obs)
        if self.beta is not None:
            lam = lam + data.x @ self.beta
        return lam + np.sum(data.z * self.b_modes[data.group - 1], axis=1)

    def to_dict(self):
        return {
            "kind": "clmm",
            "theta": self.theta.tolist(),
            "beta": None if self.beta is None else self.beta.tolist(),
            "sigma2": self.sigma2.tolist(),
            "b_modes": self.b_modes.tolist(),
            "b_sd": self.b_sd.tolist(),
            "marginal_loglik": self.marginal_loglik,
            "offset_used": self.offset_used,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_starts_used": self.n_starts_used,
            "group_labels": list(self.group_labels),
            "feature_names": list(self.feature_names),
            "slope_names": list(self.slope_names),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            theta=np.asarray(d["theta"], float),
            beta=None if d["beta"] is None else np.asarray(d["beta"], float),
            sigma2=np.asarray(d["sigma2"], float),
            b_modes=np.asarray(d["b_modes"], float),
            b_sd=np.asarray(d["b_sd"], float),
            marginal_loglik=d["marginal_loglik"], offset_used=d["offset_used"],
            converged=d["converged"], n_iter=d["n_iter"],
            n_starts_used=d["n_starts_used"], group_labels=list(d["group_labels"]),
            feature_names=list(d["feature_names"]), slope_names=list(d["slope_names"]),
        )


def _require_two_categories(data):
    if np.unique(data.y).size < 2:
        raise ValidationError("response has fewer than 2 observed categories")


# ---------------------------------------------------------------------------
# CLMM fitting
# ---------------------------------------------------------------------------

def fit_clmm(data, spec=None, offset=None, fixed_effects=True, maxiter=300,
             rel_step=1e-6):
    """Fit the mixed cumulative logit model by maximizing the Laplace
    marginal likelihood.

    Quasi-Newton (L-BFGS-B) over the reparameterized thresholds, the
    fixed coefficients when requested, and the log standard deviations;
    outer gradients are central differences. Up to three starts differing
    in the initial sd are tried before giving up.
    """
    spec = spec or RandomEffectsSpec(q_slopes=data.z.shape[1] - 1)
    if spec.dim != data.z.shape[1]:
        raise ValidationError(
            f"random-effects spec wants {spec.dim} columns but the dataset carries "
            f"{data.z.shape[1]}")
    _require_two_categories(data)
    if data.n_groups < 2:
        warnings.warn("fitting a mixed model with a single group", stacklevel=2)
    c = data.n_categories
    p = data.n_features
    d = spec.dim
    n_theta = c - 1

    tpar0 = _encode_thresholds(_empirical_threshold_start(data.y, c))

    def unpack(params):
        theta = _decode_thresholds(params[:n_theta])
        pos = n_theta
        beta = None
        if fixed_effects:
            beta = params[pos:pos + p]
            pos += p
        return theta, beta, params[pos:]

    warm = {"b": None}

    def objective(params):
        theta, beta, log_sd = unpack(params)
        if not np.all(np.isfinite(theta)):
            return 1e12
        value, b, _, _ = _laplace_state(theta, beta, log_sd, data, offset,
                                        start=warm["b"], warn=False)
        warm["b"] = b  # warm start; modes re-solve to 1e-8 every call
        return -value

    def gradient(params):
        return _central_diff_grad(objective, params, rel_step)

    # log-gap bounds keep decoded thresholds finite during line searches
    bounds = ([(None, None)] + [(-20.0, 20.0)] * (n_theta - 1)
              + [(None, None)] * (p if fixed_effects else 0)
              + [(_LOG_SD_FLOOR, 10.0)] * d)

    best = None
    results = []
    for n_start, sd0 in enumerate((1.0, 0.5, 2.0), start=1):
        warm["b"] = None
        x0 = np.concatenate([
            tpar0,
            np.zeros(p) if fixed_effects else np.empty(0),
            np.full(d, np.log(sd0)),
        ])
        res = minimize(objective, x0, jac=gradient, method="L-BFGS-B",
                       bounds=bounds,
                       options={"maxiter": maxiter, "ftol": 1e-11, "gtol": 1e-7})
        results.append(res)
        if best is None or res.fun < best.fun:
            best = res
        if res.success:
            best = res
            break
    n_starts_used = len(results)

    theta, beta, log_sd = unpack(best.x)
    value, b_modes, curv, inner_ok = _laplace_state(theta, beta, log_sd, data, offset)
    converged = bool(best.success and np.all(inner_ok))
    if not converged and not best.success:
        fit = _assemble_clmm_fit(data, theta, beta, log_sd, b_modes, curv, value,
                                 offset, converged, best, n_starts_used)
        raise FitError(
            f"CLMM did not converge after {n_starts_used} start(s): {best.message}",
            best=fit)
    return _assemble_clmm_fit(data, theta, beta, log_sd, b_modes, curv, value,
                              offset, converged, best, n_starts_used)


def _assemble_clmm_fit(data, theta, beta, log_sd, b_modes, curv, value, offset,
                       converged, res, n_starts_used):
    d = b_modes.shape[1]
    if d == 1:
        var = 1.0 / curv[:, 0, 0][:, None]
    else:
        var = np.stack([np.diag(np.linalg.inv(h)) for h in curv])
    sigma2 = np.exp(2.0 * np.maximum(np.atleast_1d(log_sd), _LOG_SD_FLOOR))
    return ClmmFit(
        theta=theta, beta=None if beta is None else np.asarray(beta, float),
        sigma2=sigma2, b_modes=b_modes, b_sd=np.sqrt(np.maximum(var, 0.0)),
        marginal_loglik=value, offset_used=offset is not None,
        converged=converged, n_iter=int(res.nit), n_starts_used=n_starts_used,
        group_labels=list(data.group_labels), feature_names=list(data.feature_names),
        slope_names=list(data.slope_names),
    )


# ---------------------------------------------------------------------------
# CLM fitting (no random effects)
# ---------------------------------------------------------------------------

def fit_clm(data, maxiter=100):
    """Maximum likelihood CLM by damped Newton.

    Gradients are analytic; the Hessian is a central difference of the
    analytic gradient. Flags likely complete separation when any
    coefficient exceeds 30 on standardized covariates.
    """
    _require_two_categories(data)
    c = data.n_categories
    p = data.n_features
    n_theta = c - 1
    n = data.n_obs

    def unpack(params):
        return _decode_thresholds(params[:n_theta]), params[n_theta:]

    def negloglik(params):
        theta, beta = unpack(params)
        return -conditional_loglik(theta, beta, None, data)

    def neg_grad(params):
        theta, beta = unpack(params)
        g_theta, g_beta, _ = conditional_loglik_grad(theta, beta, None, data)
        # chain rule through theta_c = t1 + sum(exp(delta_k))
        g_tpar = np.empty(n_theta)
        g_tpar[0] = np.sum(g_theta)
        for k in range(1, n_theta):
            g_tpar[k] = np.exp(params[k]) * np.sum(g_theta[k:])
        return -np.concatenate([g_tpar, g_beta])

    params = np.concatenate([
        _encode_thresholds(_empirical_threshold_start(data.y, c)), np.zeros(p)])
    nll = negloglik(params)
    grad = neg_grad(params)
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        if np.max(np.abs(grad)) < 1e-9 * n:
            converged = True
            break
        cols = []
        for k in range(params.size):
            h = 1e-6 * max(1.0, abs(params[k]))
            up = params.copy()
            dn = params.copy()
            up[k] += h
            dn[k] -= h
            cols.append((neg_grad(up) - neg_grad(dn)) / (2.0 * h))
        hess = np.column_stack(cols)
        hess = 0.5 * (hess + hess.T)
        # lstsq keeps flat (collinear) directions fixed instead of failing
        step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        if np.dot(step, grad) > 0:  # not a descent direction for -loglik
            step = -grad
        scale = 1.0
        for _ in range(40):
            trial = params + scale * step
            nll_try = negloglik(trial)
            if nll_try < nll:
                break
            scale *= 0.5
        else:
            converged = np.max(np.abs(grad)) < 1e-6 * n
            break
        params = params + scale * step
        nll = negloglik(params)
        grad = neg_grad(params)
    else:
        converged = np.max(np.abs(grad)) < 1e-6 * n

    theta, beta = unpack(params)
    sds = data.x.std(axis=0)
    separation = bool(np.any(np.abs(beta * np.where(sds > 0, sds, 1.0)) > 30.0))
    if separation:
        warnings.warn("possible complete separation: a standardized coefficient "
                      "exceeds 30", stacklevel=2)
    return ClmFit(
        theta=theta, beta=np.asarray(beta, float), loglik=-nll,
        converged=converged, n_iter=it,
        grad_norm_scaled=float(np.max(np.abs(grad)) / n),
        separation_flag=separation, feature_names=list(data.feature_names),
    )


def icc(sigma2_intercept):
    """Latent-scale intraclass correlation for the logit link:
    sigma2 / (sigma2 + pi^2/3)."""
    if sigma2_intercept < 0:
        raise ValueError("variance must be nonnegative")
    return sigma2_intercept / (sigma2_intercept + LOGISTIC_RESIDUAL_SD ** 2)
