"""The ordinal mixed-effects random forest estimator.

A one-vs-rest probability forest initializes the latent scores, then the
fit alternates between (i) a regression forest on the current working
target and (ii) an offset-only mixed cumulative logit model that
re-estimates thresholds, variances and group effects, until the group
effects stabilize.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .clmm import ClmmFit, RandomEffectsSpec, fit_clmm
from .core import PROB_EPS, ValidationError, category_probs, clamp_prob, logit
from .forest import ForestConfig, RandomForest, fit_forest

MODEL_FORMAT_VERSION = 1


def _spawned_config(forest_config, seed_seq):
    seed = int(seed_seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
    return replace(forest_config, seed=seed)


@dataclass
class OrdinalInitializer:
    """One-vs-rest probability forest over the ordinal classes.

    ``mode`` is "probability-forest"; "score-optimized" is a declared
    extension hook and raises. Also usable as a standalone ordinal
    classifier (argmax of the class probabilities).
    """

    mode: str = "probability-forest"
    forests: list = field(default_factory=list)
    n_categories: int = 0

    def fit(self, x, y, n_categories, forest_config=None, n_threads=1):
        if self.mode == "score-optimized":
            raise NotImplementedError(
                "score-optimized initialization is an extension hook")
        if self.mode != "probability-forest":
            raise ValueError(f"unknown initializer mode {self.mode!r}")
        y = np.asarray(y)
        if np.unique(y).size < 2:
            raise ValidationError("response has fewer than 2 observed categories")
        config = forest_config or ForestConfig()
        root = np.random.SeedSequence(config.seed).spawn(n_categories)
        self.n_categories = int(n_categories)
        self.forests = [
            fit_forest(x, (y == c + 1).astype(float), _spawned_config(config, root[c]),
                       n_threads=n_threads)
            for c in range(n_categories)
        ]
        return self

    def predict_proba(self, x):
        """Clamped, renormalized class probabilities, rows summing to 1."""
        raw = np.column_stack([f.predict(x) for f in self.forests])
        raw = clamp_prob(raw, PROB_EPS)
        return raw / raw.sum(axis=1, keepdims=True)

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1) + 1


def latent_from_class_probs(probs, y, n_categories):
    """Collapse per-class probabilities into one latent score per row.

    theta0 holds the logits of the empirical marginal cumulative
    frequencies; each row's score averages theta0_c minus the logit of
    its cumulative class probability over c = 1..C-1. A row predicted at
    exactly the marginal frequencies scores exactly 0.
    """
    probs = np.asarray(probs, float)
    y = np.asarray(y)
    c = int(n_categories)
    counts = np.bincount(y, minlength=c + 1)[1:].astype(float)
    marg_cum = np.cumsum(counts / y.size)[:-1]
    theta0 = logit(clamp_prob(marg_cum, PROB_EPS))
    gam = np.cumsum(probs, axis=1)[:, : c - 1]
    eta0 = np.mean(theta0[None, :] - logit(clamp_prob(gam, PROB_EPS)), axis=1)
    return eta0, theta0


def init_latent(data, forest_config=None, n_threads=1):
    """Initializer scores: (eta0, theta0, fitted OrdinalInitializer)."""
    init = OrdinalInitializer().fit(data.x, data.y, data.n_categories,
                                    forest_config, n_threads=n_threads)
    probs = init.predict_proba(data.x)
    eta0, theta0 = latent_from_class_probs(probs, data.y, data.n_categories)
    return eta0, theta0, init


@dataclass(frozen=True)
class OmerfConfig:
    """Alternation controls.

    ``toll`` bounds the relative change of the group effects between
    iterations; ``denominator_floor`` guards that ratio when the
    previous entry is near zero. ``oob_offset`` switches the CLMM offset
    from in-sample forest fits to OOB fits where covered.
    """

    toll: float = 0.05
    itmax: int = 100
    forest_config: ForestConfig = field(default_factory=ForestConfig)
    denominator_floor: float = 1e-4
    oob_offset: bool = False

    def __post_init__(self):
        if self.toll <= 0:
            raise ValueError("toll must be positive")
        if self.itmax < 1:
            raise ValueError("itmax must be >= 1")
        if self.denominator_floor <= 0:
            raise ValueError("denominator_floor must be positive")

    def to_dict(self):
        return {"toll": self.toll, "itmax": self.itmax,
                "forest_config": self.forest_config.to_dict(),
                "denominator_floor": self.denominator_floor,
                "oob_offset": self.oob_offset}

    @classmethod
    def from_dict(cls, d):
        return cls(toll=d["toll"], itmax=d["itmax"],
                   forest_config=ForestConfig.from_dict(d["forest_config"]),
                   denominator_floor=d["denominator_floor"],
                   oob_offset=d.get("oob_offset", False))


@dataclass
class OmerfModel:
    """Fitted estimator: final forest, final mixed model, initializer
    scores and the convergence trace."""

    forest: RandomForest
    clmm: ClmmFit
    eta0: np.ndarray
    theta0: np.ndarray
    trace: list
    converged: bool
    iterations: int
    config: OmerfConfig
    forest_target: np.ndarray
    feature_names: list = field(default_factory=list)
    group_labels: list = field(default_factory=list)

    @property
    def thresholds(self):
        return self.clmm.theta

    @property
    def sigma2(self):
        return self.clmm.sigma2

    @property
    def b_modes(self):
        return self.clmm.b_modes

    def to_dict(self):
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": "omerf",
            "forest": self.forest.to_dict(),
            "clmm": self.clmm.to_dict(),
            "eta0": self.eta0.tolist(),
            "theta0": self.theta0.tolist(),
            "trace": [float(t) for t in self.trace],
            "converged": self.converged,
            "iterations": self.iterations,
            "config": self.config.to_dict(),
            "forest_target": self.forest_target.tolist(),
            "feature_names": list(self.feature_names),
            "group_labels": list(self.group_labels),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValidationError(
                f"unsupported model format version {d.get('version')!r}")
        return cls(
            forest=RandomForest.from_dict(d["forest"]),
            clmm=ClmmFit.from_dict(d["clmm"]),
            eta0=np.asarray(d["eta0"], float),
            theta0=np.asarray(d["theta0"], float),
            trace=[float(t) for t in d["trace"]],
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            config=OmerfConfig.from_dict(d["config"]),
            forest_target=np.asarray(d["forest_target"], float),
            feature_names=list(d["feature_names"]),
            group_labels=list(d["group_labels"]),
        )


def relative_change(b_new, b_prev, floor):
    """Largest absolute change of the group effects, divided by the
    magnitude of the previous entry at that position (floored)."""
    diff = np.abs(b_new - b_prev)
    flat = int(np.argmax(diff))
    denom = max(abs(b_prev.ravel()[flat]), floor)
    return float(diff.ravel()[flat] / denom)


def fit_omerf(data, spec=None, config=None, b0=None, n_threads=1):
    """Alternate forest and mixed-model fits until the group effects move
    less than ``toll`` in relative terms.

    The initializer's latent score stays fixed; each iteration retrains
    the forest on eta0 + Z b and refits the offset-only mixed model on
    the forest's fitted values.
    """
    config = config or OmerfConfig()
    spec = spec or RandomEffectsSpec(q_slopes=data.z.shape[1] - 1)
    eta0, theta0, _ = init_latent(data, config.forest_config, n_threads=n_threads)
    d = spec.dim
    b = np.zeros((data.n_groups, d)) if b0 is None else np.asarray(b0, float).copy()
    if b.shape != (data.n_groups, d):
        raise ValidationError("b0 must be I x (Q+1)")

    # one fixed seed for every in-loop forest: the iteration map b -> b'
    # is then deterministic, so a warm start at the fixed point stays put
    loop_config = _spawned_config(
        config.forest_config,
        np.random.SeedSequence((config.forest_config.seed, 0x0f0e)))
    trace = []
    converged = False
    forest = None
    clmm_fit = None
    offset = None
    target = None
    for it in range(1, config.itmax + 1):
        target = eta0 + np.sum(data.z * b[data.group - 1], axis=1)
        forest = fit_forest(data.x, target, loop_config,
                            n_threads=n_threads, feature_names=data.feature_names)
        offset = forest.predict(data.x)
        if config.oob_offset:
            oob_vals, covered = forest.oob_predict(data.x)
            offset[covered] = oob_vals[covered]
        try:
            clmm_fit = fit_clmm(data, spec, offset=offset, fixed_effects=False)
        except Exception as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc
        b_new = clmm_fit.b_modes
        tr = relative_change(b_new, b, config.denominator_floor)
        trace.append(tr)
        b = b_new
        if tr < config.toll:
            converged = True
            break
    if not converged:
        warnings.warn(f"no convergence within {config.itmax} iterations "
                      f"(last relative change {trace[-1]:.4f})", stacklevel=2)

    return OmerfModel(
        forest=forest, clmm=clmm_fit, eta0=eta0, theta0=theta0, trace=trace,
        converged=converged, iterations=len(trace), config=config,
        forest_target=target,  # the target the final forest was trained on
        feature_names=list(data.feature_names), group_labels=list(data.group_labels),
    )


def _group_effect_rows(model, group_labels_new):
    """Map group labels onto fitted b rows; unseen labels get zeros."""
    lookup = {str(lab): i for i, lab in enumerate(model.group_labels)}
    n_groups = len(model.group_labels)
    b = model.clmm.b_modes
    rows = np.zeros((len(group_labels_new), b.shape[1]))
    for j, lab in enumerate(group_labels_new):
        i = lookup.get(str(lab))
        if i is None and isinstance(lab, (int, np.integer)) and 1 <= int(lab) <= n_groups:
            i = int(lab) - 1
        if i is not None:
            rows[j] = b[i]
    return rows


def predict_omerf(model, x_new, z_new, group_new):
    """Category probabilities and the predicted class for new rows.

    ``group_new`` holds group labels (or the dataset's 1-based indices);
    groups unseen in training predict at the population level (b = 0).
    Ties in the probability argmax resolve to the lower category.
    """
    x_new = np.asarray(x_new, float)
    z_new = np.asarray(z_new, float)
    if x_new.ndim != 2 or x_new.shape[1] != model.forest.n_features:
        raise ValidationError(
            f"expected {model.forest.n_features} feature columns")
    if z_new.shape != (x_new.shape[0], model.clmm.b_modes.shape[1]):
        raise ValidationError("z_new must be J x (Q+1)")
    b_rows = _group_effect_rows(model, list(group_new))
    lam = model.forest.predict(x_new) + np.sum(z_new * b_rows, axis=1)
    probs = category_probs(model.clmm.theta, lam)
    classes = np.argmax(probs, axis=1) + 1
    return probs, classes


def predict_dataset(model, data):
    """Predict a GroupedOrdinalDataset using its stored group labels."""
    labels = [data.group_labels[g - 1] for g in data.group]
    return predict_omerf(model, data.x, data.z, labels)


def extract_random_effects(model_or_fit):
    """Per-group effect table with 95 percent intervals.

    Accepts a fitted OMERF model or a bare mixed-model fit. Rows are
    sorted by group label; one row per (group, coefficient).
    """
    fit = model_or_fit.clmm if isinstance(model_or_fit, OmerfModel) else model_or_fit
    rows = []
    order = sorted(range(len(fit.group_labels)), key=lambda i: str(fit.group_labels[i]))
    for i in order:
        for q, coef in enumerate(fit.coef_names):
            est = float(fit.b_modes[i, q])
            sd = float(fit.b_sd[i, q])
            rows.append({
                "group": str(fit.group_labels[i]),
                "coef": coef,
                "estimate": est,
                "sd": sd,
                "lo": est - 1.96 * sd,
                "hi": est + 1.96 * sd,
            })
    return rows
