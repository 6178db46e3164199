"""Shared domain types: the cumulative logit link, threshold algebra,
grouped ordinal datasets and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# Epsilon used everywhere a probability is pushed through the logit.
PROB_EPS = 1e-6

# Latent residual sd implied by the logistic error term, pi/sqrt(3).
# Only used for ICC-style variance decompositions.
LOGISTIC_RESIDUAL_SD = math.pi / math.sqrt(3.0)


class ValidationError(ValueError):
    """Bad user input: malformed CSV, schema mismatch, invalid labels."""


def logit(p):
    """log(p / (1 - p)). Domain error outside the open unit interval."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("logit requires p in the open interval (0, 1)")
    out = np.log(p / (1.0 - p))
    return float(out) if out.ndim == 0 else out


def inv_logit(x):
    """Logistic cdf, the inverse of :func:`logit`."""
    out = expit(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def clamp_prob(p, eps=PROB_EPS):
    """Clamp p into [eps, 1 - eps]."""
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    return np.minimum(np.maximum(p, eps), 1.0 - eps)


def check_thresholds(theta):
    """Validate and return a strictly increasing threshold vector."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("thresholds must be a nonempty vector")
    if not np.all(np.isfinite(theta)):
        raise ValueError("thresholds must be finite")
    if theta.size > 1 and not np.all(np.diff(theta) > 0.0):
        raise ValueError("thresholds must be strictly increasing")
    return theta


def padded_thresholds(theta):
    """Thresholds with the conceptual sentinels -inf and +inf attached."""
    theta = check_thresholds(theta)
    return np.concatenate(([-np.inf], theta, [np.inf]))


def cumulative_probs(theta, lam):
    """gamma_c = inv_logit(theta_c - lambda) for c = 1..C-1.

    ``lam`` may be scalar or a vector; the result has one row per lambda.
    """
    theta = check_thresholds(theta)
    lam = np.asarray(lam, dtype=float)
    return expit(theta[None, :] - np.atleast_1d(lam)[:, None]) if lam.ndim else expit(theta - lam)


def category_probs(theta, lam):
    """Per-category probabilities from thresholds and a latent score.

    pi_c = inv_logit(theta_c - lambda) - inv_logit(theta_{c-1} - lambda)
    with gamma_0 = 0 and gamma_C = 1. Rows sum to 1; tiny negative
    differences from rounding are clipped to 0.
    """
    theta = check_thresholds(theta)
    lam = np.asarray(lam, dtype=float)
    scalar = lam.ndim == 0
    lam = np.atleast_1d(lam)
    gam = expit(theta[None, :] - lam[:, None])
    full = np.empty((lam.size, theta.size + 2))
    full[:, 0] = 0.0
    full[:, 1:-1] = gam
    full[:, -1] = 1.0
    pi = np.maximum(np.diff(full, axis=1), 0.0)
    return pi[0] if scalar else pi


@dataclass(frozen=True)
class Schema:
    """Column roles for CSV ingestion.

    ``fixed`` entries are either column names or
    ``{"name": col, "levels": [...]}`` for declared-level one-hot
    expansion of a categorical column. ``random_slopes`` name numeric
    columns entering the group-level design next to the implicit
    intercept. ``on_missing`` is "error" or "drop".
    """

    label: str
    group: str
    fixed: tuple
    random_slopes: tuple = ()
    on_missing: str = "error"

    @classmethod
    def from_dict(cls, d):
        for key in ("label", "group", "fixed"):
            if key not in d:
                raise ValidationError(f"schema is missing required key '{key}'")
        fixed = []
        for entry in d["fixed"]:
            if isinstance(entry, str):
                fixed.append(entry)
            elif isinstance(entry, dict) and "name" in entry and "levels" in entry:
                fixed.append((entry["name"], tuple(entry["levels"])))
            else:
                raise ValidationError(f"bad fixed-covariate entry in schema: {entry!r}")
        on_missing = d.get("on_missing", "error")
        if on_missing not in ("error", "drop"):
            raise ValidationError("schema on_missing must be 'error' or 'drop'")
        return cls(
            label=d["label"],
            group=d["group"],
            fixed=tuple(fixed),
            random_slopes=tuple(d.get("random_slopes", ())),
            on_missing=on_missing,
        )

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"schema file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self):
        fixed = [
            f if isinstance(f, str) else {"name": f[0], "levels": list(f[1])}
            for f in self.fixed
        ]
        return {
            "label": self.label,
            "group": self.group,
            "fixed": fixed,
            "random_slopes": list(self.random_slopes),
            "on_missing": self.on_missing,
        }


@dataclass
class GroupedOrdinalDataset:
    """Observations with fixed covariates, a group-level design and an
    ordinal label in 1..C.

    ``group`` holds dense 1-based indices; ``group_labels[i - 1]`` is the
    original label of group i. ``z`` always carries the constant 1 in its
    first column. Instances are treated as immutable after construction.
    """

    x: np.ndarray
    z: np.ndarray
    group: np.ndarray
    y: np.ndarray
    n_categories: int
    feature_names: list = field(default_factory=list)
    group_labels: list = field(default_factory=list)
    slope_names: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        self.z = np.ascontiguousarray(np.asarray(self.z, dtype=float))
        self.group = np.asarray(self.group, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        j = self.x.shape[0]
        if self.x.ndim != 2:
            raise ValidationError("x must be a 2-d matrix")
        if self.z.shape != (j, 1 + len(self.slope_names)):
            raise ValidationError("z must have one row per observation and Q+1 columns")
        if not np.all(self.z[:, 0] == 1.0):
            raise ValidationError("first column of z must be the constant 1")
        if self.group.shape != (j,) or self.y.shape != (j,):
            raise ValidationError("group and y must have one entry per row")
        if not np.all(np.isfinite(self.x)) or not np.all(np.isfinite(self.z)):
            raise ValidationError("covariates contain missing or non-finite values")
        if self.n_categories < 2:
            raise ValidationError("need at least 2 ordinal categories")
        if np.any(self.y < 1) or np.any(self.y > self.n_categories):
            raise ValidationError("label outside 1..C")
        n_groups = len(self.group_labels)
        if np.any(self.group < 1) or np.any(self.group > n_groups):
            raise ValidationError("group index outside 1..I")
        if len(np.unique(self.group)) != n_groups:
            raise ValidationError("every group must have at least one row")
        if not self.feature_names:
            self.feature_names = [f"x{k + 1}" for k in range(self.x.shape[1])]
        if len(self.feature_names) != self.x.shape[1]:
            raise ValidationError("feature_names does not match x columns")

    @property
    def n_obs(self):
        return self.x.shape[0]

    @property
    def n_groups(self):
        return len(self.group_labels)

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def n_random_coefs(self):
        return self.z.shape[1]

    def observed_categories(self):
        return np.unique(self.y)

    def subset(self, rows):
        """Row subset sharing C and the group label table.

        Groups absent from the subset keep their index so fits on a split
        stay aligned with the full dataset.
        """
        rows = np.asarray(rows)
        sub = GroupedOrdinalDataset.__new__(GroupedOrdinalDataset)
        sub.x = self.x[rows]
        sub.z = self.z[rows]
        sub.group = self.group[rows]
        sub.y = self.y[rows]
        sub.n_categories = self.n_categories
        sub.feature_names = list(self.feature_names)
        sub.group_labels = list(self.group_labels)
        sub.slope_names = list(self.slope_names)
        return sub


def build_dataset(x, group_labels_per_row, y, feature_names=None, slope_columns=None,
                  n_categories=None):
    """Assemble a dataset from raw arrays.

    Group labels are mapped to dense 1-based indices by lexicographic
    sort of their string form, so the mapping does not depend on row
    order. ``slope_columns`` are column indices of ``x`` copied into the
    group-level design after the intercept.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if np.any(y != np.floor(y)):
        raise ValidationError("labels must be integers")
    y = y.astype(np.int64)
    if np.any(y < 1):
        raise ValidationError("label outside 1..C")
    c = int(n_categories) if n_categories is not None else int(y.max(initial=0))
    labels_str = [str(g) for g in group_labels_per_row]
    uniq = sorted(set(labels_str))
    index_of = {lab: i + 1 for i, lab in enumerate(uniq)}
    group = np.array([index_of[lab] for lab in labels_str], dtype=np.int64)
    slope_columns = list(slope_columns or [])
    z = np.ones((x.shape[0], 1 + len(slope_columns)))
    for k, col in enumerate(slope_columns):
        z[:, k + 1] = x[:, col]
    slope_names = [
        (feature_names[col] if feature_names else f"x{col + 1}") for col in slope_columns
    ]
    return GroupedOrdinalDataset(
        x=x, z=z, group=group, y=y, n_categories=c,
        feature_names=list(feature_names or []), group_labels=uniq,
        slope_names=slope_names,
    )


def _parse_float(text, row, col):
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return None
    try:
        return float(text)
    except ValueError:
        raise ValidationError(
            f"row {row}, column '{col}': cannot parse {text!r} as a number"
        ) from None


def _parse_table(csv_path, schema, require_label):
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{csv_path}: empty file, header row required") from None
        rows = list(reader)

    col_idx = {name.strip(): k for k, name in enumerate(header)}
    has_label = schema.label in col_idx
    if require_label and not has_label:
        raise ValidationError(f"{csv_path}: column '{schema.label}' not found in header")
    needed = [schema.group]
    numeric_cols = []
    onehot_cols = []
    for entry in schema.fixed:
        if isinstance(entry, str):
            numeric_cols.append(entry)
            needed.append(entry)
        else:
            onehot_cols.append(entry)
            needed.append(entry[0])
    for name in schema.random_slopes:
        if name not in numeric_cols:
            raise ValidationError(
                f"random slope column '{name}' must also appear among the fixed columns"
            )
    for name in needed:
        if name not in col_idx:
            raise ValidationError(f"{csv_path}: column '{name}' not found in header")

    feature_names = list(numeric_cols)
    for name, levels in onehot_cols:
        feature_names.extend(f"{name}={lev}" for lev in levels)

    x_rows, y_vals, group_vals = [], [], []
    for r, row in enumerate(rows, start=2):  # header is line 1
        if len(row) != len(header):
            raise ValidationError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        vals = []
        missing = False
        for name in numeric_cols:
            v = _parse_float(row[col_idx[name]], r, name)
            if v is None:
                missing = True
                break
            vals.append(v)
        raw_label = row[col_idx[schema.label]].strip() if has_label else None
        raw_group = row[col_idx[schema.group]].strip()
        if not missing and (raw_group == "" or (has_label and raw_label == "")):
            missing = True
        if missing:
            if schema.on_missing == "drop":
                continue
            raise ValidationError(f"row {r}: missing value")
        for name, levels in onehot_cols:
            raw = row[col_idx[name]].strip()
            if raw not in {str(lev) for lev in levels}:
                raise ValidationError(
                    f"row {r}, column '{name}': level {raw!r} not among declared levels"
                )
            vals.extend(1.0 if raw == str(lev) else 0.0 for lev in levels)
        if has_label:
            try:
                label = int(raw_label)
            except ValueError:
                raise ValidationError(
                    f"row {r}, column '{schema.label}': label {raw_label!r} "
                    "is not an integer") from None
            if label < 1:
                raise ValidationError("label outside 1..C")
            y_vals.append(label)
        x_rows.append(vals)
        group_vals.append(raw_group)

    if not x_rows:
        raise ValidationError(f"{csv_path}: no usable rows")
    x = np.asarray(x_rows, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{csv_path}: non-finite covariate values")
    y = np.asarray(y_vals) if has_label else None
    return x, group_vals, y, feature_names


def load_dataset(csv_path, schema):
    """Read a CSV into a validated dataset following the schema.

    The header row is mandatory. Missing values abort with a located
    error, or drop the row when the schema says ``on_missing: drop``.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    x, group_vals, y, feature_names = _parse_table(csv_path, schema, require_label=True)
    slope_cols = [feature_names.index(name) for name in schema.random_slopes]
    return build_dataset(x, group_vals, y, feature_names=feature_names,
                         slope_columns=slope_cols)


def load_design(csv_path, schema):
    """Prediction-time loader: (x, z, group_labels_per_row, y_or_None).

    Tolerates an absent label column; the returned group labels are the
    raw strings, not remapped indices.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    x, group_vals, y, feature_names = _parse_table(csv_path, schema, require_label=False)
    z = np.ones((x.shape[0], 1 + len(schema.random_slopes)))
    for k, name in enumerate(schema.random_slopes):
        z[:, k + 1] = x[:, feature_names.index(name)]
    return x, z, group_vals, y
