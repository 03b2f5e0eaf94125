"""Model, likelihood, prior, and dataset tests."""

import math

import numpy as np
import pytest

import vifit.autodiff as ad
import vifit.models as mod


def small_problem(seed=0, n=20, k=5, sigma=0.5):
    spec = mod.RbfModelSpec.regular(k, noise_sigma=sigma)
    return mod.make_rbf_dataset(spec, n, seed=seed)


# -----------------------------------------------------------------------
# design matrix


def test_design_entry_at_center_is_one():
    spec = mod.RbfModelSpec.regular(4)
    design = mod.rbf_design_matrix(spec.centers, spec)
    np.testing.assert_allclose(np.diag(design), 1.0)


def test_design_entry_one_bandwidth_away():
    spec = mod.RbfModelSpec(centers=np.array([0.0]), bandwidth=0.3, noise_sigma=0.1)
    val = mod.rbf_design_matrix(np.array([0.3]), spec)[0, 0]
    assert math.isclose(val, math.exp(-0.5), rel_tol=1e-12)


def test_design_matches_scalar_oracle_loop():
    spec = mod.RbfModelSpec.regular(10)
    xs = np.linspace(-1, 1, 5)
    design = mod.rbf_design_matrix(xs, spec)
    for n, x in enumerate(xs):
        for k, c in enumerate(spec.centers):
            expected = math.exp(-((x - c) ** 2) / (2 * spec.bandwidth**2))
            assert math.isclose(design[n, k], expected, rel_tol=1e-14)


def test_design_entries_in_unit_interval():
    spec = mod.RbfModelSpec.regular(8)
    design = mod.rbf_design_matrix(np.linspace(-1, 1, 50), spec)
    assert np.all(design > 0) and np.all(design <= 1)


def test_spec_validation():
    with pytest.raises(ValueError):
        mod.RbfModelSpec(centers=np.array([1.0, 0.5]), bandwidth=0.1, noise_sigma=0.1)
    with pytest.raises(ValueError):
        mod.RbfModelSpec(centers=np.array([0.0]), bandwidth=0.0, noise_sigma=0.1)
    with pytest.raises(ValueError):
        mod.RbfModelSpec(centers=np.array([0.0]), bandwidth=0.1, noise_sigma=0.0)


# -----------------------------------------------------------------------
# likelihood


def test_loglik_zero_residual():
    problem = mod.RegressionProblem(
        design=np.eye(1), targets=np.zeros(1), noise_sigma=1.0, prior=mod.GaussianPrior()
    )
    val = mod.gaussian_loglik(problem, np.zeros(1))
    assert math.isclose(val, -0.5 * math.log(2 * math.pi), rel_tol=1e-12)


def test_loglik_unit_residual():
    problem = mod.RegressionProblem(
        design=np.eye(1), targets=np.ones(1), noise_sigma=1.0, prior=mod.GaussianPrior()
    )
    val = mod.gaussian_loglik(problem, np.zeros(1))
    assert math.isclose(val, -0.5 * math.log(2 * math.pi) - 0.5, rel_tol=1e-12)


def test_loglik_matches_scalar_normal_sum():
    problem, truth = small_problem(seed=1)
    theta = np.random.default_rng(2).standard_normal(problem.dim)
    preds = problem.design @ theta
    expected = sum(
        -0.5 * math.log(2 * math.pi * problem.noise_sigma**2)
        - (t - p) ** 2 / (2 * problem.noise_sigma**2)
        for t, p in zip(problem.targets, preds)
    )
    assert math.isclose(mod.gaussian_loglik(problem, theta), expected, rel_tol=1e-12)


def test_loglik_gradient_closed_form():
    problem, _ = small_problem(seed=3)
    theta = np.random.default_rng(4).standard_normal(problem.dim)
    report = ad.evaluate_with_gradient(lambda th: mod.gaussian_loglik(problem, th), theta)
    expected = problem.design.T @ (problem.targets - problem.design @ theta)
    expected /= problem.noise_sigma**2
    np.testing.assert_allclose(report.gradient, expected, atol=1e-8)


def test_minibatch_full_batch_equals_loglik():
    problem, truth = small_problem(seed=5)
    full = mod.gaussian_loglik(problem, truth.theta_star)
    batched = mod.minibatch_loglik(problem, truth.theta_star, np.arange(problem.n))
    assert math.isclose(full, batched, rel_tol=1e-12)


def test_minibatch_singleton_average_is_exact():
    problem, truth = small_problem(seed=6, n=12)
    singles = [
        mod.minibatch_loglik(problem, truth.theta_star, np.array([i]))
        for i in range(problem.n)
    ]
    assert math.isclose(
        float(np.mean(singles)), mod.gaussian_loglik(problem, truth.theta_star), rel_tol=1e-12
    )


def test_minibatch_unbiased_over_random_batches():
    problem, truth = small_problem(seed=7, n=20)
    rng = np.random.default_rng(8)
    estimates = np.array(
        [
            mod.minibatch_loglik(
                problem, truth.theta_star, rng.choice(20, size=5, replace=False)
            )
            for _ in range(10_000)
        ]
    )
    se = estimates.std(ddof=1) / math.sqrt(len(estimates))
    full = mod.gaussian_loglik(problem, truth.theta_star)
    assert abs(estimates.mean() - full) < 3 * se


def test_minibatch_empty_rejected():
    problem, truth = small_problem(seed=9)
    with pytest.raises(ValueError, match="nonempty"):
        mod.minibatch_loglik(problem, truth.theta_star, np.array([], dtype=int))


# -----------------------------------------------------------------------
# priors


def test_gaussian_prior_at_zero():
    val = mod.prior_logpdf(mod.GaussianPrior(1.0), np.zeros(1))
    assert math.isclose(val, -0.5 * math.log(2 * math.pi), rel_tol=1e-12)


def test_cauchy_prior_at_mode():
    val = mod.prior_logpdf(mod.StudentTPrior(nu=1.0, scale=1.0), np.zeros(1))
    assert math.isclose(val, math.log(1.0 / math.pi), rel_tol=1e-12)


def test_gaussian_prior_gradient_is_minus_lambda_theta():
    lam = 2.5
    theta = np.array([0.3, -1.2, 0.7])
    report = ad.evaluate_with_gradient(
        lambda th: mod.prior_logpdf(mod.GaussianPrior(lam), th), theta
    )
    np.testing.assert_allclose(report.gradient, -lam * theta, rtol=1e-12)


def test_gaussian_prior_maximized_at_zero():
    report = ad.evaluate_with_gradient(
        lambda th: mod.prior_logpdf(mod.GaussianPrior(0.7), th), np.zeros(4)
    )
    np.testing.assert_array_equal(report.gradient, np.zeros(4))


def test_student_t_matches_scipy():
    import scipy.stats

    theta = np.array([0.5, -1.5, 2.0])
    for nu, s in [(1.0, 1.0), (3.0, 0.5), (7.0, 2.0)]:
        expected = scipy.stats.t(df=nu, scale=s).logpdf(theta).sum()
        got = mod.prior_logpdf(mod.StudentTPrior(nu=nu, scale=s), theta)
        assert math.isclose(got, expected, rel_tol=1e-12)


def test_student_t_gradient_matches_finite_differences():
    prior = mod.StudentTPrior(nu=3.0, scale=0.8)
    theta = np.array([0.4, -0.9])
    report = ad.evaluate_with_gradient(lambda th: mod.prior_logpdf(prior, th), theta)
    fd = ad.finite_difference_gradient(lambda th: mod.prior_logpdf(prior, th), theta)
    np.testing.assert_allclose(report.gradient, fd, rtol=1e-6)


# -----------------------------------------------------------------------
# datasets


def test_noise_free_targets_are_clean_predictions():
    spec = mod.RbfModelSpec(
        centers=np.linspace(-1, 1, 6), bandwidth=0.4, noise_sigma=1e-300
    )
    problem, truth = mod.make_rbf_dataset(spec, 30, seed=10)
    np.testing.assert_allclose(problem.targets, problem.design @ truth.theta_star)


def test_dataset_reproducible_by_seed():
    spec = mod.RbfModelSpec.regular(5)
    a, ta = mod.make_rbf_dataset(spec, 25, seed=11)
    b, tb = mod.make_rbf_dataset(spec, 25, seed=11)
    np.testing.assert_array_equal(a.targets, b.targets)
    np.testing.assert_array_equal(ta.theta_star, tb.theta_star)


def test_noise_std_in_chi_square_band():
    spec = mod.RbfModelSpec.regular(10, noise_sigma=0.25)
    problem, truth = mod.make_rbf_dataset(spec, 200, seed=12)
    resid_std = np.std(problem.targets - truth.clean, ddof=1)
    assert 0.20 <= resid_std <= 0.30


def test_dataset_csv_round_trip(tmp_path):
    spec = mod.RbfModelSpec.regular(6)
    problem, truth = mod.make_rbf_dataset(spec, 15, seed=13)
    path = tmp_path / "data.csv"
    mod.save_dataset(problem, truth, path, seed=13)
    problem2, truth2 = mod.load_dataset(path)
    np.testing.assert_array_equal(problem2.targets, problem.targets)
    np.testing.assert_array_equal(problem2.design, problem.design)
    np.testing.assert_array_equal(truth2.theta_star, truth.theta_star)


def test_mlp_hook_smoke():
    mlp = mod.OneHiddenMlp(n_hidden=3, noise_sigma=0.3)
    rng = np.random.default_rng(14)
    xs = np.linspace(-1, 1, 12)
    theta_true = rng.standard_normal(10)
    ys = np.asarray(mlp.predict_rows(xs, theta_true))
    problem = mod.MlpProblem(
        mlp=mlp, xs=xs, targets=ys, prior=mod.GaussianPrior(1.0)
    )
    theta = rng.standard_normal(10)
    objective = lambda th: problem.loglik_rows(th) + problem.prior_rows(th)
    report = ad.evaluate_with_gradient(objective, theta)
    fd = ad.finite_difference_gradient(objective, theta, step=1e-5)
    np.testing.assert_allclose(report.gradient, fd, rtol=1e-5, atol=1e-7)
