"""Tests for the reverse-mode tape: exactness, finite differences, errors."""

import numpy as np
import pytest

import vifit.autodiff as ad
from vifit.lowrank import lowrank_logpdf


def test_square_value_and_gradient():
    report = ad.evaluate_with_gradient(lambda x: x[0] * x[0], np.array([3.0]))
    assert report.value == 9.0
    np.testing.assert_allclose(report.gradient, [6.0])
    assert report.max_abs_component == 6.0


def test_product_rule():
    report = ad.evaluate_with_gradient(lambda x: x[0] * x[1], np.array([2.0, 5.0]))
    assert report.value == 10.0
    np.testing.assert_allclose(report.gradient, [5.0, 2.0])


def test_logsumexp_of_equal_logits():
    report = ad.evaluate_with_gradient(ad.logsumexp, np.array([0.0, 0.0]))
    np.testing.assert_allclose(report.value, np.log(2.0))
    np.testing.assert_allclose(report.gradient, [0.5, 0.5])


def test_finite_difference_on_square():
    grad = ad.finite_difference_gradient(
        lambda x: x[0] * x[0], np.array([3.0]), step=1e-4
    )
    np.testing.assert_allclose(grad, [6.0], atol=1e-6)


def test_finite_difference_constant_objective():
    grad = ad.finite_difference_gradient(lambda x: 4.2, np.zeros(3))
    np.testing.assert_array_equal(grad, np.zeros(3))


def test_constant_objective_gradient_is_zero():
    report = ad.evaluate_with_gradient(lambda x: 4.2, np.zeros(3))
    assert report.value == 4.2
    np.testing.assert_array_equal(report.gradient, np.zeros(3))


def test_structured_logpdf_gradient_matches_finite_differences():
    # Gradient w.r.t. the mean of a rank-2 Gaussian log-density at fixed theta.
    rng = np.random.default_rng(7)
    p, k = 5, 2
    theta = rng.standard_normal(p)
    a = np.exp(rng.standard_normal(p) * 0.3)
    u = rng.standard_normal((p, k)) * 0.4

    def objective(mu):
        return lowrank_logpdf(theta, mu, a, u)

    mu0 = rng.standard_normal(p)
    report = ad.evaluate_with_gradient(objective, mu0)
    fd = ad.finite_difference_gradient(objective, mu0)
    np.testing.assert_allclose(report.gradient, fd, rtol=1e-5, atol=1e-8)


def test_full_primitive_set_against_finite_differences():
    mat = np.array([[1.0, 0.5, -0.2], [0.0, 2.0, 0.3]])

    def objective(x):
        y = ad.matmul(mat, x)
        z = ad.exp(x[0]) + ad.log(1.0 + x[1] * x[1]) + ad.sqrt(2.0 + x[2])
        z = z + ad.tanh(x[0]) + ad.softplus(x[1]) - x[2] / (1.0 + x[0] * x[0])
        z = z + ad.dot(y, y) + ad.logsumexp(x) + ad.sum(x * x)
        z = z + ad.sum(ad.reshape(x, (3, 1)) * mat.T)
        return z + ad.stack([x[0], x[1] * x[2]])[1]

    psi = np.array([0.3, -0.7, 1.1])
    report = ad.evaluate_with_gradient(objective, psi)
    fd = ad.finite_difference_gradient(objective, psi)
    np.testing.assert_allclose(report.gradient, fd, rtol=1e-5, atol=1e-8)


def test_solve_and_logdet_gradients():
    rng = np.random.default_rng(11)
    b = rng.standard_normal(3)

    def objective(x):
        m = ad.reshape(x, (3, 3))
        spd = ad.matmul(m, ad.transpose(m)) + np.eye(3)
        return ad.logdet_spd(spd) + ad.dot(b, ad.solve_spd(spd, b))

    psi = rng.standard_normal(9) * 0.5
    report = ad.evaluate_with_gradient(objective, psi)
    fd = ad.finite_difference_gradient(objective, psi)
    np.testing.assert_allclose(report.gradient, fd, rtol=1e-5, atol=1e-8)


def test_gradient_linearity():
    rng = np.random.default_rng(3)

    def f(x):
        return ad.sum(ad.exp(0.3 * x)) + ad.dot(x, x)

    def g(x):
        return ad.logsumexp(x) - ad.sum(ad.tanh(x))

    psi = rng.standard_normal(4)
    for a, b in rng.standard_normal((5, 2)):
        combo = ad.evaluate_with_gradient(lambda x: a * f(x) + b * g(x), psi)
        gf = ad.evaluate_with_gradient(f, psi).gradient
        gg = ad.evaluate_with_gradient(g, psi).gradient
        np.testing.assert_allclose(combo.gradient, a * gf + b * gg, rtol=1e-12)


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    psi = rng.standard_normal(6)
    z = rng.standard_normal(6)

    def objective(x):
        theta = x + 0.1 * z
        return ad.sum(theta * theta) + ad.logsumexp(theta)

    first = ad.evaluate_with_gradient(objective, psi)
    second = ad.evaluate_with_gradient(objective, psi)
    assert first.value == second.value
    np.testing.assert_array_equal(first.gradient, second.gradient)


def test_nonfinite_intermediate_names_the_primitive():
    with np.errstate(invalid="ignore", divide="ignore"):
        with pytest.raises(ad.NonFiniteValueError, match="log"):
            ad.evaluate_with_gradient(lambda x: ad.log(x[0] - 1.0), np.array([0.0]))


def test_unsupported_primitive_raises():
    with pytest.raises(ad.UnsupportedPrimitiveError):
        ad.evaluate_with_gradient(lambda x: np.sin(x[0]), np.array([0.5]))
    with pytest.raises(ad.UnsupportedPrimitiveError):
        ad.evaluate_with_gradient(lambda x: float(x[0]), np.array([0.5]))


def test_reflected_numpy_operands_route_through_tape():
    # ndarray * Var and np.exp(Var) must both stay differentiable.
    def objective(x):
        scaled = np.array([1.0, 2.0, 3.0]) * x
        return ad.sum(np.exp(scaled))

    psi = np.array([0.1, -0.2, 0.3])
    report = ad.evaluate_with_gradient(objective, psi)
    fd = ad.finite_difference_gradient(objective, psi)
    np.testing.assert_allclose(report.gradient, fd, rtol=1e-6)


def test_gradient_length_matches_psi_dimension():
    report = ad.evaluate_with_gradient(lambda x: x[0] + 0.0 * x[1], np.ones(5))
    assert report.gradient.shape == (5,)
    np.testing.assert_allclose(report.gradient, [1.0, 0.0, 0.0, 0.0, 0.0])
