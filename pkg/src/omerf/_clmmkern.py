"""Numba kernel for the per-group pieces of the mixed-model inner
problem: joint log-density, gradient and curvature in one pass."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _expit(t):
    if t >= 0.0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def group_stats(pad, y, base, z, g0, b, prec):
    """Per-group objective, gradient and curvature of
    sum_j log pi_j(b_g) - b_g' diag(prec) b_g / 2.

    ``pad`` holds thresholds with -inf/+inf sentinels; ``base`` is the
    part of the linear predictor that does not involve b. The returned
    curvature is the negative Hessian (positive definite near a mode).
    """
    n = y.size
    n_groups, d = b.shape
    obj = np.zeros(n_groups)
    grad = np.zeros((n_groups, d))
    curv = np.zeros((n_groups, d, d))
    for j in range(n):
        g = g0[j]
        lam = base[j]
        for q in range(d):
            lam += z[j, q] * b[g, q]
        au = pad[y[j]] - lam
        al = pad[y[j] - 1] - lam
        fu_cdf = _expit(au)
        fl_cdf = _expit(al)
        pi = fu_cdf - fl_cdf
        if pi < 1e-300:
            pi = 1e-300
        fu = fu_cdf * (1.0 - fu_cdf)
        fl = fl_cdf * (1.0 - fl_cdf)
        dfu = fu * (1.0 - 2.0 * fu_cdf)
        dfl = fl * (1.0 - 2.0 * fl_cdf)
        dlam = (fl - fu) / pi
        w = (dfu - dfl) / pi - dlam * dlam
        obj[g] += np.log(pi)
        for q in range(d):
            grad[g, q] += z[j, q] * dlam
            for r in range(d):
                curv[g, q, r] -= z[j, q] * z[j, r] * w
    for g in range(n_groups):
        for q in range(d):
            obj[g] -= 0.5 * b[g, q] * b[g, q] * prec[q]
            grad[g, q] -= b[g, q] * prec[q]
            curv[g, q, q] += prec[q]
    return obj, grad, curv
