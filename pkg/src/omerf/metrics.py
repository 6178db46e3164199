"""Ordinal classification metrics: accuracy, code-scale MSE, adjusted
Rand index, Cohen's kappa, and report assembly."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


def _as_label_arrays(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-d and of equal length")
    if a.size == 0:
        raise ValueError("label vectors must be nonempty")
    return a, b


def accuracy(truth, pred):
    """Fraction of exact matches."""
    truth, pred = _as_label_arrays(truth, pred)
    return float(np.mean(truth == pred))


def mse_ordinal(truth, pred):
    """Mean squared difference of the integer category codes."""
    truth, pred = _as_label_arrays(truth, pred)
    if truth.min() < 1 or pred.min() < 1:
        raise ValueError("labels must be positive category codes")
    d = truth - pred
    return float(np.mean(d.astype(float) ** 2))


@dataclass
class ConfusionMatrix:
    """C x C count matrix, rows = truth, columns = prediction."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, truth, pred, n_categories=None):
        truth, pred = _as_label_arrays(truth, pred)
        c = int(n_categories) if n_categories else int(max(truth.max(), pred.max()))
        if truth.min() < 1 or pred.min() < 1 or truth.max() > c or pred.max() > c:
            raise ValueError("labels outside 1..C")
        flat = (truth - 1) * c + (pred - 1)
        counts = np.bincount(flat, minlength=c * c).reshape(c, c)
        return cls(counts=counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def row_marginals(self):
        return self.counts.sum(axis=1)

    def col_marginals(self):
        return self.counts.sum(axis=0)


def _comb2(n):
    return n * (n - 1) // 2


def _contingency(a, b):
    """Dense label cross-table via offset bincount. Empty rows or columns
    contribute zero to every pair count, so they need no trimming."""
    a0 = a - a.min()
    b0 = b - b.min()
    ra = int(a0.max()) + 1
    rb = int(b0.max()) + 1
    return np.bincount(a0 * rb + b0, minlength=ra * rb).reshape(ra, rb)


def _comb2_sum(counts):
    counts = counts.astype(np.int64, copy=False)
    return int(np.sum(counts * (counts - 1) // 2))


def adjusted_rand_index(a, b):
    """Hubert-Arabie adjusted Rand index between two labelings.

    Computed from the pair-count contingency table in exact integer
    arithmetic with a single final division. Identical partitions give
    exactly 1, including the degenerate all-one-cluster case.
    """
    a, b = _as_label_arrays(a, b)
    if a.size < 2:
        raise ValueError("ARI needs at least 2 observations")
    table = _contingency(a, b)
    index = _comb2_sum(table.ravel())
    sum_a = _comb2_sum(table.sum(axis=1))
    sum_b = _comb2_sum(table.sum(axis=0))
    total = _comb2(a.size)
    if index == sum_a == sum_b:
        return 1.0  # same partition, possibly under relabeled clusters
    num = 2 * (total * index - sum_a * sum_b)
    den = total * (sum_a + sum_b) - 2 * sum_a * sum_b
    if den == 0:
        return 0.0
    return num / den


def cohens_kappa(truth, pred):
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    Exact integer core: kappa = (n*D - S) / (n^2 - S) with D the diagonal
    count and S = sum of rowmarg*colmarg. The all-same degenerate case
    (p_e = p_o = 1) returns 0 with a warning.
    """
    truth, pred = _as_label_arrays(truth, pred)
    if truth.min() < 1 or pred.min() < 1:
        raise ValueError("labels outside 1..C")
    c = int(max(truth.max(), pred.max()))
    table = np.bincount((truth - 1) * c + (pred - 1), minlength=c * c).reshape(c, c)
    n = truth.size
    diag = int(np.trace(table))
    s = int(np.dot(table.sum(axis=1), table.sum(axis=0)))
    num = n * diag - s
    den = n * n - s
    if den == 0:
        warnings.warn("kappa is undefined for a single shared category; returning 0",
                      stacklevel=2)
        return 0.0
    return num / den


@dataclass
class MetricsReport:
    """One evaluation: the four headline metrics plus identifiers.

    ``extra`` reserves named slots for additional ordinal indices
    computed by external code.
    """

    accuracy: float
    mse: float
    ari: float
    kappa: float
    n: int
    model: str = ""
    dataset: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "model": self.model,
            "dataset": self.dataset,
            "n": self.n,
            "accuracy": self.accuracy,
            "mse": self.mse,
            "ari": self.ari,
            "kappa": self.kappa,
        }
        d.update(self.extra)
        return d

    def metric_values(self):
        return {"accuracy": self.accuracy, "mse": self.mse,
                "ari": self.ari, "kappa": self.kappa}


def evaluate(truth, pred, model="", dataset=""):
    """Bundle all four metrics for one (truth, prediction) pair."""
    truth, pred = _as_label_arrays(truth, pred)
    return MetricsReport(
        accuracy=accuracy(truth, pred),
        mse=mse_ordinal(truth, pred),
        ari=adjusted_rand_index(truth, pred),
        kappa=cohens_kappa(truth, pred),
        n=int(truth.size),
        model=model,
        dataset=dataset,
    )


def mean_and_variance(values):
    """Across-replication mean and sample variance (ddof=1; 0 when n < 2)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot aggregate zero replications")
    mean = float(v.mean())
    var = float(v.var(ddof=1)) if v.size > 1 else 0.0
    return mean, var
