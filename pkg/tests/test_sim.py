import numpy as np
import pytest

from omerf.sim import (DGP_TABLE, DgpSpec, TreeNode, balanced_thresholds,
                       default_tree_function, fixed_effect_latent, generate,
                       latent_to_ordinal, sample_covariates, sample_random_effects)
from oracles import mean_cdf_threshold_residual

# Independent copy of the scenario table for the fidelity check.
EXPECTED_TABLE = {
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


def test_table_fidelity():
    assert DGP_TABLE == EXPECTED_TABLE
    for dgp_id, (form, alpha, beta, s1, s2) in EXPECTED_TABLE.items():
        spec = DgpSpec.from_id(dgp_id)
        assert (spec.form, spec.alpha, spec.beta) == (form, alpha, beta)
        assert (spec.sigma2_intercept, spec.sigma2_slope) == (s1, s2)
        assert (spec.n_groups, spec.group_size, spec.n_categories) == (10, 100, 3)


def test_bad_dgp_id():
    with pytest.raises(ValueError):
        DgpSpec.from_id(11)


def test_covariate_distributions():
    x = sample_covariates(100_000, seed=1)
    assert x.shape == (100_000, 7)
    assert np.max(np.abs(x.mean(axis=0))) < 0.05
    for col, half in zip(range(3, 7), (3.0, 6.0, 5.0, 4.0)):
        assert x[:, col].min() >= -half and x[:, col].max() <= half


def test_covariate_determinism():
    a = sample_covariates(100, seed=9)
    b = sample_covariates(100, seed=9)
    c = sample_covariates(100, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_polynomial_form_at_origin():
    spec = DgpSpec.from_id(1, 0).__class__(id=1, form="polynomial-tree", alpha=1.0,
                                           beta=0.0, sigma2_intercept=1.0)
    x = np.zeros((1, 7))
    assert fixed_effect_latent(x, spec)[0] == 3.0


def test_linear_form_arithmetic():
    spec = DgpSpec.from_id(9)
    x = np.array([[1.0, 1.0, 2.0]])
    assert fixed_effect_latent(x, spec)[0] == 7.0


def test_tree_only_form_equals_leaves():
    spec = DgpSpec(id=1, form="polynomial-tree", alpha=0.0, beta=1.0,
                   sigma2_intercept=1.0)
    tree = default_tree_function()
    rng = np.random.default_rng(2)
    x = sample_covariates(50, rng)
    vals = fixed_effect_latent(x, spec, tree)
    # hand-traced default structure
    expected = np.where(x[:, 3] <= 0,
                        np.where(x[:, 4] <= 0, 0.0, 4.0),
                        np.where(x[:, 5] <= 0, 8.0, 12.0))
    assert np.array_equal(vals, expected)
    assert tree.n_leaves() == 4


def test_x7_never_enters():
    spec = DgpSpec.from_id(1, 0)
    rng = np.random.default_rng(3)
    x = sample_covariates(20, rng)
    x2 = x.copy()
    x2[:, 6] = 99.0
    assert np.array_equal(fixed_effect_latent(x, spec), fixed_effect_latent(x2, spec))


def test_custom_tree_must_have_leaves():
    spec = DgpSpec(id=1, form="polynomial-tree", alpha=0.0, beta=1.0,
                   sigma2_intercept=1.0)
    with pytest.raises(ValueError, match="2 leaves"):
        fixed_effect_latent(np.zeros((1, 7)), spec, TreeNode(value=1.0))


def test_random_effects_zero_variance():
    spec = DgpSpec(id=1, form="polynomial-tree", alpha=0.3, beta=0.7,
                   sigma2_intercept=0.0, n_groups=50)
    b = sample_random_effects(spec, seed=4)
    assert b.shape == (50, 1)
    assert np.all(b == 0.0)


def test_random_effects_sample_variance():
    spec = DgpSpec(id=3, form="polynomial-tree", alpha=0.3, beta=0.7,
                   sigma2_intercept=5.0, n_groups=10_000)
    b = sample_random_effects(spec, seed=5)
    assert abs(b.var(ddof=1) / 5.0 - 1.0) < 0.05


def test_slope_column_only_for_slope_dgps():
    for dgp_id in (1, 2, 3, 4, 9, 10):
        assert sample_random_effects(DgpSpec.from_id(dgp_id), 0).shape[1] == 1
    for dgp_id in (5, 6, 7, 8):
        assert sample_random_effects(DgpSpec.from_id(dgp_id), 0).shape[1] == 2


def test_constant_latent_closed_form():
    with pytest.warns(UserWarning, match="constant"):
        theta = balanced_thresholds(np.zeros(100), 3)
    assert theta == pytest.approx([-0.6931471806, 0.6931471806], abs=1e-8)


def test_threshold_solver_residuals():
    spec = DgpSpec.from_id(1, seed=6)
    sim = generate(spec)
    resid = mean_cdf_threshold_residual(sim.thresholds, sim.w, 3)
    assert np.max(np.abs(resid)) < 1e-10


def test_class_balance_large_sample():
    spec = DgpSpec.from_id(1, seed=7, n_groups=100, group_size=1000)
    sim = generate(spec)
    shares = np.bincount(sim.dataset.y, minlength=4)[1:] / sim.dataset.n_obs
    assert np.max(np.abs(shares - 1 / 3)) < 0.02


def test_shift_equivariance_of_thresholds():
    rng = np.random.default_rng(8)
    w = rng.normal(0, 2, 5000)
    t0 = balanced_thresholds(w, 3)
    t1 = balanced_thresholds(w + 2.5, 3)
    assert np.max(np.abs(t1 - t0 - 2.5)) < 1e-8
    # label distribution is unchanged in law
    y0, _ = latent_to_ordinal(w, 3, seed=1)
    y1, _ = latent_to_ordinal(w + 2.5, 3, seed=2)
    f0 = np.bincount(y0, minlength=4)[1:] / y0.size
    f1 = np.bincount(y1, minlength=4)[1:] / y1.size
    assert np.max(np.abs(f0 - f1)) < 0.01


def test_generate_shapes_and_determinism():
    spec = DgpSpec.from_id(1, seed=123)
    sim = generate(spec)
    assert sim.dataset.n_obs == 1000
    assert sim.dataset.n_groups == 10
    assert sim.dataset.n_categories == 3
    assert sim.b_true.shape == (10, 1)
    assert sim.spec.sigma2_intercept == 1.0
    again = generate(DgpSpec.from_id(1, seed=123))
    assert np.array_equal(sim.dataset.x, again.dataset.x)
    assert np.array_equal(sim.dataset.y, again.dataset.y)
    assert np.array_equal(sim.train_rows, again.train_rows)
    other = generate(DgpSpec.from_id(1, seed=124))
    assert not np.array_equal(sim.dataset.y, other.dataset.y)


def test_split_is_group_stratified():
    spec = DgpSpec.from_id(5, seed=9)
    sim = generate(spec)
    train, test = sim.train(), sim.test()
    assert train.n_obs == 800 and test.n_obs == 200
    assert set(np.unique(train.group)) == set(range(1, 11))
    assert set(np.unique(test.group)) == set(range(1, 11))
    assert np.intersect1d(sim.train_rows, sim.test_rows).size == 0


def test_slope_dgp_dataset_carries_z():
    sim = generate(DgpSpec.from_id(7, seed=10))
    assert sim.dataset.z.shape == (1000, 2)
    assert np.allclose(sim.dataset.z[:, 1], sim.dataset.x[:, 0])


def test_class_balance_all_dgps_twenty_seeds():
    for dgp_id in range(1, 11):
        for seed in range(20):
            sim = generate(DgpSpec.from_id(dgp_id, seed=seed))
            shares = np.bincount(sim.dataset.y, minlength=4)[1:] / 1000
            assert shares.min() >= 0.28 and shares.max() <= 0.39, \
                f"dgp {dgp_id} seed {seed}: {shares}"


def test_x7_mutual_information_permutation_test():
    spec = DgpSpec.from_id(1, seed=11, n_groups=100, group_size=1000)
    sim = generate(spec)
    x7 = sim.dataset.x[:, 6]
    y = sim.dataset.y
    bins = np.quantile(x7, np.linspace(0, 1, 11)[1:-1])
    bx = np.digitize(x7, bins)

    def mutual_info(codes, labels):
        table = np.bincount(codes * 3 + (labels - 1), minlength=30).reshape(10, 3)
        p = table / table.sum()
        px = p.sum(axis=1, keepdims=True)
        py = p.sum(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = p * np.log(p / (px * py))
        return float(np.nansum(terms))

    observed = mutual_info(bx, y)
    rng = np.random.default_rng(12)
    perm_stats = np.array([mutual_info(bx, rng.permutation(y)) for _ in range(200)])
    p_value = float(np.mean(perm_stats >= observed))
    assert p_value > 0.01
