"""Numba kernels for CART growth and forest traversal.

Trees are flat arrays: ``feature[i] < 0`` marks a leaf, otherwise
``left``/``right`` hold child ids local to the tree. A forest
concatenates its trees and indexes them through ``tree_offsets``.
"""

import numpy as np
from numba import njit

U64 = np.uint64


@njit(cache=True, nogil=True)
def _mix64(state):
    # splitmix64; deterministic per-tree stream for feature draws
    state = state + U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    z = z ^ (z >> U64(31))
    return state, z


@njit(cache=True, nogil=True)
def grow_tree(x, target, inbag, mtry, min_node_size, max_depth, seed):
    """Grow one CART regression tree on the in-bag rows (with repeats).

    Splits minimize within-node SSE over ``mtry`` candidate features,
    thresholds are midpoints between consecutive distinct values, and
    gain ties break toward the lowest feature index then threshold.
    """
    n_total = inbag.size
    p = x.shape[1]
    max_nodes = 2 * n_total + 1
    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    value = np.zeros(max_nodes)
    node_start = np.zeros(max_nodes, np.int64)
    node_end = np.zeros(max_nodes, np.int64)
    node_depth = np.zeros(max_nodes, np.int32)

    idx = inbag.copy()
    vals = np.empty(n_total)
    tvals = np.empty(n_total)
    buf = np.empty(n_total, np.int64)
    pool = np.empty(p, np.int64)
    state = U64(seed)

    n_nodes = 1
    node_end[0] = n_total
    pos = 0
    while pos < n_nodes:
        s = node_start[pos]
        e = node_end[pos]
        n = e - s
        tsum = 0.0
        tmin = target[idx[s]]
        tmax = tmin
        for k in range(s, e):
            v = target[idx[k]]
            tsum += v
            if v < tmin:
                tmin = v
            if v > tmax:
                tmax = v
        value[pos] = tsum / n

        can_split = n >= 2 * min_node_size and tmax > tmin
        if max_depth >= 0 and node_depth[pos] >= max_depth:
            can_split = False

        best_f = -1
        best_thr = 0.0
        if can_split:
            for i in range(p):
                pool[i] = i
            best_gain = -np.inf
            for j in range(mtry):
                state, z = _mix64(state)
                r = j + int(z % U64(p - j))
                tmp = pool[j]
                pool[j] = pool[r]
                pool[r] = tmp
                f = int(pool[j])
                for k in range(n):
                    row = idx[s + k]
                    vals[k] = x[row, f]
                    tvals[k] = target[row]
                order = np.argsort(vals[:n])
                sl = 0.0
                for k2 in range(1, n):
                    sl += tvals[order[k2 - 1]]
                    vlo = vals[order[k2 - 1]]
                    vhi = vals[order[k2]]
                    if vhi > vlo and k2 >= min_node_size and n - k2 >= min_node_size:
                        sr = tsum - sl
                        gain = sl * sl / k2 + sr * sr / (n - k2)
                        thr = 0.5 * (vlo + vhi)
                        take = gain > best_gain
                        if (not take and gain == best_gain and best_f >= 0
                                and (f < best_f or (f == best_f and thr < best_thr))):
                            take = True
                        if take:
                            best_gain = gain
                            best_f = f
                            best_thr = thr

        if best_f >= 0:
            nl = 0
            for k in range(s, e):
                if x[idx[k], best_f] <= best_thr:
                    buf[nl] = idx[k]
                    nl += 1
            nr = nl
            for k in range(s, e):
                if x[idx[k], best_f] > best_thr:
                    buf[nr] = idx[k]
                    nr += 1
            for k in range(n):
                idx[s + k] = buf[k]
            feature[pos] = best_f
            threshold[pos] = best_thr
            left[pos] = n_nodes
            right[pos] = n_nodes + 1
            node_start[n_nodes] = s
            node_end[n_nodes] = s + nl
            node_depth[n_nodes] = node_depth[pos] + 1
            node_start[n_nodes + 1] = s + nl
            node_end[n_nodes + 1] = e
            node_depth[n_nodes + 1] = node_depth[pos] + 1
            n_nodes += 2
        pos += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _leaf_value(feature, threshold, left, right, value, base, xrow):
    node = 0
    while feature[base + node] >= 0:
        g = base + node
        if xrow[feature[g]] <= threshold[g]:
            node = left[g]
        else:
            node = right[g]
    return value[base + node]


@njit(cache=True, nogil=True)
def predict_mean(feature, threshold, left, right, value, tree_offsets, x):
    n = x.shape[0]
    n_trees = tree_offsets.size - 1
    out = np.zeros(n)
    for k in range(n_trees):
        base = tree_offsets[k]
        for i in range(n):
            out[i] += _leaf_value(feature, threshold, left, right, value, base, x[i])
    return out / n_trees


@njit(cache=True, nogil=True)
def predict_per_tree(feature, threshold, left, right, value, tree_offsets, x):
    n = x.shape[0]
    n_trees = tree_offsets.size - 1
    out = np.zeros((n, n_trees))
    for k in range(n_trees):
        base = tree_offsets[k]
        for i in range(n):
            out[i, k] = _leaf_value(feature, threshold, left, right, value, base, x[i])
    return out


@njit(cache=True, nogil=True)
def predict_oob_sums(feature, threshold, left, right, value, tree_offsets, x, oob):
    n = x.shape[0]
    n_trees = tree_offsets.size - 1
    sums = np.zeros(n)
    counts = np.zeros(n, np.int64)
    for k in range(n_trees):
        base = tree_offsets[k]
        for i in range(n):
            if oob[k, i]:
                sums[i] += _leaf_value(feature, threshold, left, right, value, base, x[i])
                counts[i] += 1
    return sums, counts
