"""Bagged CART regression forest with OOB prediction, permutation
importance and partial dependence."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _forestkern as kern


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters.

    ``mtry`` defaults to floor(P/3), at least 1, when left as None.
    ``min_node_size`` is the smallest child a split may produce, so
    nodes stop splitting below 2 * min_node_size rows. ``max_depth``
    of None grows unlimited depth. Bootstrap samples draw J rows with
    replacement.
    """

    num_trees: int = 500
    mtry: int = None
    min_node_size: int = 5
    bootstrap: bool = True
    max_depth: int = None
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def resolved_mtry(self, n_features):
        m = self.mtry if self.mtry is not None else max(1, n_features // 3)
        if m > n_features:
            raise ValueError(f"mtry {m} exceeds the {n_features} available features")
        return m

    def to_dict(self):
        return {
            "num_trees": self.num_trees, "mtry": self.mtry,
            "min_node_size": self.min_node_size, "bootstrap": self.bootstrap,
            "max_depth": self.max_depth, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in
                      ("num_trees", "mtry", "min_node_size", "bootstrap", "max_depth", "seed")})


def tree_seed_pairs(seed, num_trees):
    """Per-tree RNG material derived from the master seed.

    Tree k gets (bootstrap SeedSequence, uint64 feature-stream seed);
    growth order therefore never affects the result.
    """
    children = np.random.SeedSequence(seed).spawn(num_trees)
    pairs = []
    for child in children:
        boot_ss, feat_ss = child.spawn(2)
        pairs.append((boot_ss, int(feat_ss.generate_state(1, np.uint64)[0])))
    return pairs


def bootstrap_indices(boot_ss, n_rows):
    """The in-bag row draw for one tree (n_rows draws with replacement)."""
    return np.random.default_rng(boot_ss).integers(0, n_rows, size=n_rows)


@dataclass
class RandomForest:
    """Fitted forest stored as concatenated flat trees.

    Per-tree node ids in ``left``/``right`` are local; slice tree k with
    ``tree_offsets[k]:tree_offsets[k+1]``. ``oob_mask[k, j]`` is True
    when row j was out of bag for tree k (all False without bootstrap).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_offsets: np.ndarray
    oob_mask: np.ndarray
    config: ForestConfig
    n_features: int
    feature_names: list = field(default_factory=list)

    @property
    def num_trees(self):
        return self.tree_offsets.size - 1

    def _check_matrix(self, x):
        x = np.ascontiguousarray(np.asarray(x, dtype=float))
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected a matrix with {self.n_features} columns")
        return x

    def predict(self, x):
        """Mean of the per-tree predictions."""
        x = self._check_matrix(x)
        if x.shape[0] == 0:
            return np.empty(0)
        return kern.predict_mean(self.feature, self.threshold, self.left,
                                 self.right, self.value, self.tree_offsets, x)

    def predict_per_tree(self, x):
        x = self._check_matrix(x)
        if x.shape[0] == 0:
            return np.empty((0, self.num_trees))
        return kern.predict_per_tree(self.feature, self.threshold, self.left,
                                     self.right, self.value, self.tree_offsets, x)

    def oob_predict(self, x):
        """Per-row average over trees that left the row out of bag.

        Returns (values, covered); uncovered rows hold NaN.
        """
        if not self.config.bootstrap:
            raise ValueError("OOB prediction requires a bootstrap-fitted forest")
        x = self._check_matrix(x)
        sums, counts = kern.predict_oob_sums(self.feature, self.threshold, self.left,
                                             self.right, self.value, self.tree_offsets,
                                             x, self.oob_mask)
        covered = counts > 0
        out = np.full(x.shape[0], np.nan)
        out[covered] = sums[covered] / counts[covered]
        return out, covered

    def to_dict(self):
        trees = []
        for k in range(self.num_trees):
            s, e = int(self.tree_offsets[k]), int(self.tree_offsets[k + 1])
            trees.append({
                "feature": self.feature[s:e].tolist(),
                "threshold": self.threshold[s:e].tolist(),
                "left": self.left[s:e].tolist(),
                "right": self.right[s:e].tolist(),
                "value": self.value[s:e].tolist(),
            })
        return {
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "n_rows_trained": int(self.oob_mask.shape[1]),
            "trees": trees,
        }

    @classmethod
    def from_dict(cls, d):
        config = ForestConfig.from_dict(d["config"])
        feats, thrs, lefts, rights, vals, offsets = [], [], [], [], [], [0]
        for tree in d["trees"]:
            feats.extend(tree["feature"])
            thrs.extend(tree["threshold"])
            lefts.extend(tree["left"])
            rights.extend(tree["right"])
            vals.extend(tree["value"])
            offsets.append(len(feats))
        n_rows = int(d["n_rows_trained"])
        # OOB masks are a pure function of (seed, J); replay the draw.
        oob = np.zeros((len(d["trees"]), n_rows), dtype=bool)
        if config.bootstrap:
            for k, (boot_ss, _) in enumerate(tree_seed_pairs(config.seed, config.num_trees)):
                inbag = np.zeros(n_rows, dtype=bool)
                inbag[bootstrap_indices(boot_ss, n_rows)] = True
                oob[k] = ~inbag
        return cls(
            feature=np.asarray(feats, np.int32), threshold=np.asarray(thrs, float),
            left=np.asarray(lefts, np.int32), right=np.asarray(rights, np.int32),
            value=np.asarray(vals, float), tree_offsets=np.asarray(offsets, np.int64),
            oob_mask=oob, config=config, n_features=int(d["n_features"]),
            feature_names=list(d.get("feature_names", [])),
        )


def fit_forest(x, target, config=None, n_threads=1, feature_names=None):
    """Grow a bagged CART regression forest.

    Deterministic for a fixed seed regardless of ``n_threads``: every
    tree draws from its own derived stream and trees are assembled in
    index order.
    """
    config = config or ForestConfig()
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    target = np.asarray(target, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be a 2-d matrix")
    n, p = x.shape
    if target.shape != (n,):
        raise ValueError("target length must match the rows of x")
    if n < 2:
        raise ValueError("need at least 2 rows")
    if not np.all(np.isfinite(target)) or not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    mtry = config.resolved_mtry(p)
    max_depth = -1 if config.max_depth is None else config.max_depth

    pairs = tree_seed_pairs(config.seed, config.num_trees)
    inbags = []
    oob = np.zeros((config.num_trees, n), dtype=bool)
    for k, (boot_ss, _) in enumerate(pairs):
        if config.bootstrap:
            inbag = bootstrap_indices(boot_ss, n)
            hit = np.zeros(n, dtype=bool)
            hit[inbag] = True
            oob[k] = ~hit
        else:
            inbag = np.arange(n, dtype=np.int64)
        inbags.append(np.asarray(inbag, np.int64))

    def grow(k):
        return kern.grow_tree(x, target, inbags[k], mtry, config.min_node_size,
                              max_depth, np.uint64(pairs[k][1]))

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            trees = list(pool.map(grow, range(config.num_trees)))
    else:
        trees = [grow(k) for k in range(config.num_trees)]

    offsets = np.zeros(config.num_trees + 1, np.int64)
    for k, tree in enumerate(trees):
        offsets[k + 1] = offsets[k] + tree[0].size
    return RandomForest(
        feature=np.concatenate([t[0] for t in trees]),
        threshold=np.concatenate([t[1] for t in trees]),
        left=np.concatenate([t[2] for t in trees]),
        right=np.concatenate([t[3] for t in trees]),
        value=np.concatenate([t[4] for t in trees]),
        tree_offsets=offsets, oob_mask=oob, config=config, n_features=p,
        feature_names=list(feature_names or []),
    )


def _prediction_pair(forest, x):
    """(baseline predictions, scorer) honoring the OOB convention."""
    if forest.config.bootstrap:
        base, covered = forest.oob_predict(x)

        def score(xmod):
            vals, _ = forest.oob_predict(xmod)
            return vals, covered
    else:
        base = forest.predict(x)
        covered = np.ones(x.shape[0], dtype=bool)

        def score(xmod):
            return forest.predict(xmod), covered
    return base, covered, score


def permutation_importance(forest, x, target, repeats=5, seed=0):
    """Mean OOB-MSE increase from permuting each column.

    Negative values are kept as computed; they are plain Monte Carlo
    noise around zero for irrelevant features.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    target = np.asarray(target, dtype=float)
    base, covered, score = _prediction_pair(forest, x)
    if not np.any(covered):
        raise ValueError("no OOB coverage; use more trees")
    base_mse = float(np.mean((target[covered] - base[covered]) ** 2))
    rng = np.random.default_rng(seed)
    imp = np.zeros(forest.n_features)
    for _ in range(repeats):
        for p in range(forest.n_features):
            perm = rng.permutation(x.shape[0])
            xmod = x.copy()
            xmod[:, p] = x[perm, p]
            vals, cov = score(xmod)
            imp[p] += np.mean((target[cov] - vals[cov]) ** 2) - base_mse
    return imp / repeats


def partial_dependence(forest, x, feature, grid):
    """Average prediction with one column overwritten by each grid value."""
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if not 0 <= feature < forest.n_features:
        raise ValueError(f"feature index {feature} out of range")
    pd_vals = np.empty(grid.size)
    xmod = x.copy()
    for i, v in enumerate(grid):
        xmod[:, feature] = v
        pd_vals[i] = float(np.mean(forest.predict(xmod)))
    return grid, pd_vals


def default_grid(x, feature, n_points=20):
    col = np.asarray(x, dtype=float)[:, feature]
    lo, hi = col.min(), col.max()
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, n_points)


def write_importance_csv(path, feature_names, importances):
    order = np.argsort(-np.asarray(importances), kind="stable")
    rank = np.empty(len(feature_names), dtype=int)
    rank[order] = np.arange(1, len(feature_names) + 1)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "importance", "rank"])
        for name, imp, r in zip(feature_names, importances, rank):
            writer.writerow([name, repr(float(imp)), int(r)])


def write_partial_dependence_csv(path, rows):
    """rows: iterable of (feature_name, grid_value, pd_value)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "grid_value", "pd_value"])
        for name, g, v in rows:
            writer.writerow([name, repr(float(g)), repr(float(v))])
