"""Hierarchical ordinal data generators: covariate sampling, the two
fixed-effect functional forms, group effects, and latent-to-ordinal
conversion with balanced categories."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit as _logit

from .core import GroupedOrdinalDataset, build_dataset, category_probs

N_COVARIATES = 7

# dgp id -> (form, alpha, beta, sigma2 intercept, sigma2 slope)
DGP_TABLE = {
    1: ("polynomial-tree", 0.3, 0.7, 1.0, None),
    2: ("polynomial-tree", 0.7, 0.3, 1.0, None),
    3: ("polynomial-tree", 0.3, 0.7, 5.0, None),
    4: ("polynomial-tree", 0.7, 0.3, 5.0, None),
    5: ("polynomial-tree", 0.3, 0.7, 0.3, 0.5),
    6: ("polynomial-tree", 0.7, 0.3, 0.3, 0.5),
    7: ("polynomial-tree", 0.3, 0.7, 1.0, 1.0),
    8: ("polynomial-tree", 0.7, 0.3, 1.0, 1.0),
    9: ("linear", None, None, 1.0, None),
    10: ("linear", None, None, 5.0, None),
}


@dataclass(frozen=True)
class TreeNode:
    """Binary step function over the covariate box.

    Leaves carry ``value``; internal nodes send rows with
    ``x[:, feature] <= threshold`` to ``left``.
    """

    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None

    @property
    def is_leaf(self):
        return self.feature < 0

    def n_leaves(self):
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_leaf:
            return np.full(x.shape[0], self.value)
        out = np.empty(x.shape[0])
        go_left = x[:, self.feature] <= self.threshold
        out[go_left] = self.left.evaluate(x[go_left])
        out[~go_left] = self.right.evaluate(x[~go_left])
        return out


def default_tree_function():
    """Two-level step function on (x4, x5, x6) with leaves 0/4/8/12.

    The leaf spread is comparable to the sd of the polynomial component
    so the alpha/beta mixing weights behave as intended. Override by
    passing any TreeNode with >= 2 leaves to the generator.
    """
    left = TreeNode(feature=4, threshold=0.0,
                    left=TreeNode(value=0.0), right=TreeNode(value=4.0))
    right = TreeNode(feature=5, threshold=0.0,
                     left=TreeNode(value=8.0), right=TreeNode(value=12.0))
    return TreeNode(feature=3, threshold=0.0, left=left, right=right)


@dataclass(frozen=True)
class DgpSpec:
    """One simulation scenario: functional form, mixing weights, group
    effect variances and design sizes."""

    id: int
    form: str
    alpha: float
    beta: float
    sigma2_intercept: float
    sigma2_slope: float = None
    n_groups: int = 10
    group_size: int = 100
    n_categories: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.form not in ("polynomial-tree", "linear"):
            raise ValueError(f"unknown functional form {self.form!r}")
        if self.form == "polynomial-tree":
            if self.alpha is None or self.beta is None:
                raise ValueError("polynomial-tree form requires alpha and beta")
            if self.alpha < 0 or self.beta < 0:
                raise ValueError("alpha and beta must be nonnegative")
        if self.sigma2_intercept < 0:
            raise ValueError("variances must be nonnegative")
        if self.sigma2_slope is not None and self.sigma2_slope < 0:
            raise ValueError("variances must be nonnegative")
        if self.n_categories < 2 or self.n_groups < 1 or self.group_size < 1:
            raise ValueError("bad design sizes")

    @property
    def has_slope(self):
        return self.sigma2_slope is not None

    @property
    def n_obs(self):
        return self.n_groups * self.group_size

    @classmethod
    def from_id(cls, dgp_id, seed=0, **overrides):
        if dgp_id not in DGP_TABLE:
            raise ValueError(f"dgp id must be in 1..10, got {dgp_id}")
        form, alpha, beta, s1, s2 = DGP_TABLE[dgp_id]
        spec = cls(id=dgp_id, form=form, alpha=alpha, beta=beta,
                   sigma2_intercept=s1, sigma2_slope=s2, seed=seed)
        return replace(spec, **overrides) if overrides else spec

    def to_dict(self):
        return {
            "id": self.id, "form": self.form, "alpha": self.alpha, "beta": self.beta,
            "sigma2_intercept": self.sigma2_intercept, "sigma2_slope": self.sigma2_slope,
            "n_groups": self.n_groups, "group_size": self.group_size,
            "n_categories": self.n_categories, "seed": self.seed,
        }


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def sample_covariates(n, seed):
    """n x 7 covariate draw: x1..x3 standard normal, x4..x7 uniform on
    (-3,3), (-6,6), (-5,5), (-4,4), all independent."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _rng(seed)
    x = np.empty((n, N_COVARIATES))
    x[:, 0:3] = rng.standard_normal((n, 3))
    for col, half in zip(range(3, 7), (3.0, 6.0, 5.0, 4.0)):
        x[:, col] = rng.uniform(-half, half, size=n)
    return x


def fixed_effect_latent(x, spec, tree=None):
    """Evaluate the fixed-effect functional form row by row.

    polynomial-tree: alpha*(3 + 7*x1^2 - 5*x2 + x2*x3^2) + beta*tree(x4,x5,x6)
    linear:          3 + 7*x1 - 5*x2 + x2*x3

    x7 never enters either form.
    """
    x = np.asarray(x, dtype=float)
    if spec.form == "linear":
        if x.shape[1] < 3:
            raise ValueError("linear form needs at least 3 covariate columns")
        return 3.0 + 7.0 * x[:, 0] - 5.0 * x[:, 1] + x[:, 1] * x[:, 2]
    if x.shape[1] < N_COVARIATES:
        raise ValueError("polynomial-tree form needs 7 covariate columns")
    tree = tree if tree is not None else default_tree_function()
    if tree.n_leaves() < 2:
        raise ValueError("tree function must have at least 2 leaves")
    poly = 3.0 + 7.0 * x[:, 0] ** 2 - 5.0 * x[:, 1] + x[:, 1] * x[:, 2] ** 2
    return spec.alpha * poly + spec.beta * tree.evaluate(x)


def sample_random_effects(spec, seed):
    """I x (Q+1) normal draws; the slope column exists only when the
    scenario declares a slope variance."""
    rng = _rng(seed)
    cols = [rng.normal(0.0, np.sqrt(spec.sigma2_intercept), size=spec.n_groups)]
    if spec.has_slope:
        cols.append(rng.normal(0.0, np.sqrt(spec.sigma2_slope), size=spec.n_groups))
    return np.column_stack(cols)


def balanced_thresholds(w, n_categories):
    """Thresholds making each category's expected share 1/C against the
    realized latent sample: solve mean_j inv_logit(theta_c - w_j) = c/C."""
    w = np.asarray(w, dtype=float)
    c_count = int(n_categories)
    if c_count < 2:
        raise ValueError("need C >= 2")
    if w.size < c_count:
        raise ValueError("need at least C latent values")
    if np.ptp(w) == 0.0:
        warnings.warn("latent sample is constant; thresholds are degenerate shifts",
                      stacklevel=2)
    lo, hi = w.min(), w.max()
    theta = np.empty(c_count - 1)
    for c in range(1, c_count):
        target = c / c_count
        off = _logit(target)

        def gap(t):
            return float(np.mean(expit(t - w)) - target)

        theta[c - 1] = brentq(gap, lo + off - 1e-9, hi + off + 1e-9,
                              xtol=1e-12, rtol=8.9e-16)
    return theta


def latent_to_ordinal(w, n_categories, seed):
    """Draw ordinal labels from logistic segment probabilities around the
    balanced thresholds. Returns (labels, thresholds)."""
    rng = _rng(seed)
    w = np.asarray(w, dtype=float)
    theta = balanced_thresholds(w, n_categories)
    gam = expit(theta[None, :] - w[:, None])
    u = rng.random(w.size)
    y = (u[:, None] > gam).sum(axis=1) + 1
    return y.astype(np.int64), theta


@dataclass
class SimulatedData:
    """A generated dataset plus its ground truth and 80/20 split."""

    dataset: GroupedOrdinalDataset
    w: np.ndarray
    b_true: np.ndarray
    thresholds: np.ndarray
    train_rows: np.ndarray
    test_rows: np.ndarray
    spec: DgpSpec

    def train(self):
        return self.dataset.subset(self.train_rows)

    def test(self):
        return self.dataset.subset(self.test_rows)


def generate(spec, tree=None, train_ratio=0.8):
    """Build a full scenario draw: covariates, group effects, balanced
    ordinal labels, and a group-stratified train/test split."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must lie in (0, 1)")
    root = np.random.SeedSequence(spec.seed)
    cov_ss, re_ss, label_ss, split_ss = root.spawn(4)

    n = spec.n_obs
    x = sample_covariates(n, np.random.default_rng(cov_ss))
    group = np.repeat(np.arange(1, spec.n_groups + 1), spec.group_size)
    b = sample_random_effects(spec, np.random.default_rng(re_ss))

    z = np.ones((n, 2 if spec.has_slope else 1))
    if spec.has_slope:
        z[:, 1] = x[:, 0]
    w = fixed_effect_latent(x, spec, tree=tree) + np.sum(z * b[group - 1], axis=1)
    y, theta = latent_to_ordinal(w, spec.n_categories, np.random.default_rng(label_ss))

    # Zero-padded labels keep the lexicographic index mapping aligned with
    # the numeric group order, so b_true rows match dataset group indices.
    width = len(str(spec.n_groups))
    labels = [f"{g:0{width}d}" for g in group]
    dataset = build_dataset(
        x, labels, y, feature_names=[f"x{k + 1}" for k in range(N_COVARIATES)],
        slope_columns=[0] if spec.has_slope else [], n_categories=spec.n_categories,
    )

    split_rng = np.random.default_rng(split_ss)
    train_rows, test_rows = [], []
    for g in range(1, spec.n_groups + 1):
        rows = np.where(group == g)[0]
        perm = split_rng.permutation(rows)
        n_train = int(round(train_ratio * rows.size))
        n_train = min(max(n_train, 1), rows.size - 1) if rows.size > 1 else rows.size
        train_rows.append(perm[:n_train])
        test_rows.append(perm[n_train:])
    train_rows = np.sort(np.concatenate(train_rows))
    test_rows = np.sort(np.concatenate(test_rows)) if any(r.size for r in test_rows) \
        else np.empty(0, dtype=np.int64)

    return SimulatedData(dataset=dataset, w=w, b_true=b, thresholds=theta,
                         train_rows=train_rows, test_rows=test_rows, spec=spec)


def label_probabilities(sim):
    """Ground-truth category probabilities for every generated row."""
    return category_probs(sim.thresholds, sim.w)


def write_dataset_csv(path, dataset):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "y"] + list(dataset.feature_names))
        for j in range(dataset.n_obs):
            label = dataset.group_labels[dataset.group[j] - 1]
            writer.writerow([label, int(dataset.y[j])] +
                            [repr(float(v)) for v in dataset.x[j]])


def write_truth_json(path, sim):
    doc = {
        "spec": sim.spec.to_dict(),
        "seed": sim.spec.seed,
        "thresholds": [float(t) for t in sim.thresholds],
        "b_true": [[float(v) for v in row] for row in sim.b_true],
        "group_labels": list(sim.dataset.group_labels),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_split_json(path, sim):
    doc = {
        "train_rows": [int(r) for r in sim.train_rows],
        "test_rows": [int(r) for r in sim.test_rows],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
