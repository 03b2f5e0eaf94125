"""Family contract tests: init, sampling modes, densities, enumeration."""

import json
import math

import numpy as np
import pytest

import vifit.families as fam
from vifit.lowrank import StructuredCov, structured_logpdf

SHAPE4 = fam.ModelShape.linear(4)


def make_sn(rng, p=4, k=2, scale=0.4):
    return fam.StructuredNormalState(
        mu=rng.standard_normal(p),
        log_a=np.log(scale**2) + 0.3 * rng.standard_normal(p),
        u=rng.standard_normal((p, k)) * 0.5,
    )


# -----------------------------------------------------------------------
# init_family


def test_init_shapes_and_finiteness():
    rng = np.random.default_rng(0)
    st = fam.init_family("map", fam.ModelShape.linear(3), rng)
    assert st.theta_hat.shape == (3,)
    assert np.all(np.isfinite(st.theta_hat))


def test_init_same_seed_identical():
    a = fam.init_family("mixture", SHAPE4, np.random.default_rng(7), rank=2)
    b = fam.init_family("mixture", SHAPE4, np.random.default_rng(7), rank=2)
    np.testing.assert_array_equal(fam.pack(a), fam.pack(b))


def test_init_unknown_tag():
    with pytest.raises(ValueError, match="unknown family tag"):
        fam.init_family("laplace", SHAPE4, np.random.default_rng(0))


def test_init_bounds_follow_fan_in():
    shape = fam.ModelShape.linear(200, fan_in=4)
    st = fam.init_family("mean_field", shape, np.random.default_rng(1))
    assert np.all(np.abs(st.mu) <= 0.5)
    np.testing.assert_allclose(st.sigma, 0.05 * 0.5)


def test_rank_zero_structured_matches_mean_field():
    rng = np.random.default_rng(2)
    sn = fam.init_family("structured_normal", SHAPE4, rng, rank=0)
    mf = fam.MeanFieldState(mu=sn.mu.copy(), log_sigma=0.5 * sn.log_a.copy())
    theta = np.random.default_rng(3).standard_normal((6, 4))
    np.testing.assert_allclose(
        fam.log_density(sn, theta), fam.log_density(mf, theta), rtol=1e-12
    )
    assert math.isclose(
        fam.entropy_closed_form(sn), fam.entropy_closed_form(mf), rel_tol=1e-12
    )
    noise = fam.draw_noise(sn, "naive", 5, np.random.default_rng(4))
    draws_sn = fam.draws_rows(sn, fam.unpack_vars(sn, fam.pack(sn)), noise)
    draws_mf = fam.draws_rows(mf, fam.unpack_vars(mf, fam.pack(mf)), noise)
    np.testing.assert_allclose(draws_sn, draws_mf, rtol=1e-12)


# -----------------------------------------------------------------------
# sampling


def test_map_sampling_returns_point_estimate():
    st = fam.init_family("map", SHAPE4, np.random.default_rng(5))
    batch = fam.sample(st, "naive", 7, np.random.default_rng(6))
    assert batch.draws.shape == (7, 4)
    assert np.all(batch.draws == st.theta_hat)


def test_paired_twins_average_to_mean():
    rng = np.random.default_rng(8)
    st = make_sn(rng)
    batch = fam.sample(st, "paired", 2, np.random.default_rng(9))
    twin_mean = 0.5 * (batch.draws[0] + batch.draws[1])
    scale = np.max(np.abs(batch.draws)) + 1.0
    np.testing.assert_allclose(twin_mean, st.mu, rtol=0, atol=64 * np.finfo(float).eps * scale)


def test_paired_noise_is_exactly_negated():
    rng = np.random.default_rng(10)
    st = make_sn(rng)
    noise = fam.draw_noise(st, "paired", 8, rng)
    np.testing.assert_array_equal(noise.z_diag[1::2], -noise.z_diag[0::2])
    np.testing.assert_array_equal(noise.z_lowrank[1::2], -noise.z_lowrank[0::2])


def test_dropout_draws_live_on_atoms_with_expected_frequencies():
    theta_hat = np.array([1.5, -2.0])
    st = fam.DropoutState(theta_hat=theta_hat, keep_prob=0.5, droppable=np.ones(2, bool))
    batch = fam.sample(st, "naive", 40_000, np.random.default_rng(11))
    atoms = fam.enumerate_dropout(st).atoms
    counts = np.zeros(4)
    for i, atom in enumerate(atoms):
        counts[i] = np.all(batch.draws == atom, axis=1).sum()
    assert counts.sum() == 40_000  # every draw is one of the four atoms
    np.testing.assert_allclose(counts / 40_000, 0.25, atol=0.01)


def test_mode_family_mismatch_errors():
    rng = np.random.default_rng(12)
    with pytest.raises(fam.ModeFamilyError):
        fam.sample(fam.init_family("map", SHAPE4, rng), "paired", 2, rng)
    with pytest.raises(fam.ModeFamilyError):
        fam.sample(fam.init_family("mc_dropout", SHAPE4, rng), "unscented", 2, rng)
    with pytest.raises(fam.ModeFamilyError):
        fam.sample(fam.init_family("mean_field", SHAPE4, rng), "unscented", 2, rng)
    with pytest.raises(ValueError, match="even"):
        fam.sample(make_sn(rng), "paired", 3, rng)
    with pytest.raises(ValueError, match="multiple"):
        fam.sample(make_sn(rng, k=2), "unscented", 6, rng)


def test_unscented_group_reproduces_lowrank_covariance_exactly():
    rng = np.random.default_rng(13)
    st = make_sn(rng, p=5, k=3)
    noise = fam.draw_noise(st, "unscented", 6, rng)
    # Within one group the low-rank noise second moment is exactly the identity.
    second = noise.z_lowrank.T @ noise.z_lowrank / 6
    np.testing.assert_allclose(second, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(noise.z_lowrank.mean(axis=0), 0.0, atol=1e-15)
    np.testing.assert_array_equal(noise.z_diag[1::2], -noise.z_diag[0::2])


def test_sampling_moments_structured():
    rng = np.random.default_rng(14)
    st = make_sn(rng, p=5, k=2)
    batch = fam.sample(st, "naive", 200_000, rng)
    dense = st.cov().dense()
    emp = np.cov(batch.draws.T)
    assert np.linalg.norm(emp - dense) / np.linalg.norm(dense) < 2e-2


def test_mixture_sampling_uses_weights():
    rng = np.random.default_rng(15)
    comp_a = fam.StructuredNormalState(
        mu=np.array([-5.0]), log_a=np.array([-3.0]), u=np.zeros((1, 0))
    )
    comp_b = fam.StructuredNormalState(
        mu=np.array([5.0]), log_a=np.array([-3.0]), u=np.zeros((1, 0))
    )
    st = fam.MixtureState(
        components=(comp_a, comp_b), weight_logits=np.log(np.array([0.2, 0.8]))
    )
    batch = fam.sample(st, "naive", 50_000, rng)
    frac_b = float(np.mean(batch.draws[:, 0] > 0))
    assert abs(frac_b - 0.8) < 0.01


# -----------------------------------------------------------------------
# log densities


def test_single_component_mixture_equals_structured_density():
    rng = np.random.default_rng(16)
    comp = make_sn(rng)
    st = fam.MixtureState(components=(comp,), weight_logits=np.zeros(1))
    theta = rng.standard_normal(4)
    assert abs(fam.log_density(st, theta) - fam.log_density(comp, theta)) < 1e-12


def test_dropout_all_ones_atom_log_weight():
    st = fam.DropoutState(
        theta_hat=np.array([0.3, -0.7, 1.1]),
        keep_prob=0.6,
        droppable=np.ones(3, bool),
    )
    assert math.isclose(
        fam.log_density(st, st.theta_hat), 3 * math.log(0.6), rel_tol=1e-12
    )


def test_mean_field_density_at_mean_unit_sigma():
    p = 3
    st = fam.MeanFieldState(mu=np.zeros(p), log_sigma=np.zeros(p))
    assert math.isclose(
        fam.log_density(st, np.zeros(p)), -0.5 * p * math.log(2 * math.pi), rel_tol=1e-12
    )


def test_map_density_on_and_off_atom():
    st = fam.MapState(theta_hat=np.array([1.0, 2.0]))
    assert fam.log_density(st, st.theta_hat) == 0.0
    assert fam.log_density(st, np.array([1.0, 2.1])) == -math.inf


def test_dropout_off_atom_density_is_minus_inf():
    st = fam.DropoutState(
        theta_hat=np.array([1.0, 2.0]), keep_prob=0.5, droppable=np.ones(2, bool)
    )
    assert fam.log_density(st, np.array([1.0, 0.0])) == math.log(0.25)
    assert fam.log_density(st, np.array([0.5, 2.0])) == -math.inf


def test_bias_coordinates_never_dropped():
    shape = fam.ModelShape(
        blocks=(fam.ParamBlock("w", 3, 3), fam.ParamBlock("b", 1, 3, is_bias=True))
    )
    st = fam.init_family("mc_dropout", shape, np.random.default_rng(17), keep_prob=0.5)
    assert st.droppable.tolist() == [True, True, True, False]
    batch = fam.sample(st, "naive", 500, np.random.default_rng(18))
    np.testing.assert_array_equal(batch.draws[:, 3], st.theta_hat[3])
    mixture = fam.enumerate_dropout(st)
    assert mixture.n_atoms == 8
    np.testing.assert_array_equal(mixture.atoms[:, 3], st.theta_hat[3])


def test_rotation_of_factor_leaves_density_invariant():
    rng = np.random.default_rng(19)
    st = make_sn(rng, p=6, k=3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rotated = fam.StructuredNormalState(mu=st.mu, log_a=st.log_a, u=st.u @ q)
    theta = rng.standard_normal((5, 6))
    np.testing.assert_allclose(
        fam.log_density(st, theta), fam.log_density(rotated, theta), rtol=1e-9
    )


def test_density_normalization_by_quadrature():
    rng = np.random.default_rng(20)
    grid = np.linspace(-10, 10, 501)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)

    mf = fam.MeanFieldState(mu=np.array([0.4, -0.2]), log_sigma=np.log([0.8, 1.3]))
    sn = fam.StructuredNormalState(
        mu=np.array([0.1, 0.5]), log_a=np.log([0.5, 0.9]), u=np.array([[0.7], [-0.4]])
    )
    mix = fam.MixtureState(
        components=(
            fam.StructuredNormalState(
                mu=np.array([-1.5, 0.0]), log_a=np.log([0.4, 0.6]), u=np.zeros((2, 0))
            ),
            fam.StructuredNormalState(
                mu=np.array([1.5, 1.0]), log_a=np.log([0.7, 0.3]), u=np.zeros((2, 0))
            ),
        ),
        weight_logits=np.array([0.3, -0.2]),
    )
    for state in (mf, sn, mix):
        dens = np.exp(fam.log_density(state, pts)).reshape(xx.shape)
        total = np.trapezoid(np.trapezoid(dens, grid, axis=1), grid)
        assert abs(total - 1.0) < 1e-4, state.tag

    # 1-D case
    xs = np.linspace(-12, 12, 4001)
    st1 = fam.MeanFieldState(mu=np.array([0.2]), log_sigma=np.array([0.1]))
    total = np.trapezoid(np.exp(fam.log_density(st1, xs[:, None])), xs)
    assert abs(total - 1.0) < 1e-4


def test_mean_log_density_matches_negative_entropy():
    rng = np.random.default_rng(21)
    st = make_sn(rng, p=4, k=2)
    n = 100_000
    batch = fam.sample(st, "naive", n, rng)
    logq = fam.log_density(st, batch.draws)
    se = logq.std(ddof=1) / math.sqrt(n)
    assert abs(logq.mean() + fam.entropy_closed_form(st)) < 3 * se


# -----------------------------------------------------------------------
# entropy


def test_entropy_values():
    st = fam.MeanFieldState(mu=np.zeros(1), log_sigma=np.zeros(1))
    assert math.isclose(
        fam.entropy_closed_form(st), 0.5 * math.log(2 * math.pi * math.e), rel_tol=1e-12
    )
    sn = fam.StructuredNormalState(
        mu=np.zeros(2), log_a=np.log([0.5, 2.0]), u=np.zeros((2, 0))
    )
    mf = fam.MeanFieldState(mu=np.zeros(2), log_sigma=0.5 * np.log([0.5, 2.0]))
    assert math.isclose(
        fam.entropy_closed_form(sn), fam.entropy_closed_form(mf), rel_tol=1e-12
    )
    rng = np.random.default_rng(22)
    assert fam.entropy_closed_form(fam.init_family("mixture", SHAPE4, rng)) is None
    assert fam.entropy_closed_form(fam.init_family("map", SHAPE4, rng)) is None
    assert fam.entropy_closed_form(fam.init_family("mc_dropout", SHAPE4, rng)) is None


# -----------------------------------------------------------------------
# dropout enumeration


def test_enumerate_counts():
    rng = np.random.default_rng(23)
    st2 = fam.init_family("mc_dropout", fam.ModelShape.linear(2), rng)
    assert fam.enumerate_dropout(st2).n_atoms == 4
    st10 = fam.init_family("mc_dropout", fam.ModelShape.linear(10), rng)
    mixture = fam.enumerate_dropout(st10)
    assert mixture.n_atoms == 1024
    assert abs(mixture.weights.sum() - 1.0) < 1e-12


def test_enumerate_guard():
    st = fam.DropoutState(
        theta_hat=np.zeros(25), keep_prob=0.5, droppable=np.ones(25, bool)
    )
    with pytest.raises(ValueError, match="guard"):
        fam.enumerate_dropout(st)


def test_keep_prob_one_reduces_to_map():
    rng = np.random.default_rng(24)
    st = fam.DropoutState(
        theta_hat=rng.standard_normal(4), keep_prob=1.0, droppable=np.ones(4, bool)
    )
    mixture = fam.enumerate_dropout(st)
    live = mixture.weights > 0
    assert live.sum() == 1
    np.testing.assert_array_equal(mixture.atoms[live][0], st.theta_hat)
    batch = fam.sample(st, "naive", 50, rng)
    assert np.all(batch.draws == st.theta_hat)


def test_keep_prob_zero_all_mass_at_origin():
    st = fam.DropoutState(
        theta_hat=np.array([1.0, -2.0]), keep_prob=0.0, droppable=np.ones(2, bool)
    )
    mixture = fam.enumerate_dropout(st)
    live = mixture.weights > 0
    assert live.sum() == 1
    np.testing.assert_array_equal(mixture.atoms[live][0], np.zeros(2))


def test_no_atom_coincides_with_continuous_truth():
    # A fresh standard-normal parameter vector differs from every dropout atom.
    rng = np.random.default_rng(25)
    st = fam.init_family("mc_dropout", fam.ModelShape.linear(10), rng, keep_prob=0.5)
    mixture = fam.enumerate_dropout(st)
    theta_star = rng.standard_normal(10)
    assert not np.any(np.all(mixture.atoms == theta_star, axis=1))
    assert fam.log_density(st, theta_star) == -math.inf


# -----------------------------------------------------------------------
# serialization


@pytest.mark.parametrize(
    "tag,kwargs",
    [
        ("map", {}),
        ("mean_field", {}),
        ("structured_normal", {"rank": 2}),
        ("mixture", {"rank": 1, "components": 3}),
        ("mc_dropout", {"keep_prob": 0.37}),
    ],
)
def test_json_round_trip_lossless(tag, kwargs):
    st = fam.init_family(tag, SHAPE4, np.random.default_rng(26), **kwargs)
    back = fam.state_from_json(fam.state_to_json(st))
    np.testing.assert_array_equal(fam.pack(back), fam.pack(st))
    assert back.tag == st.tag
    doc = json.loads(fam.state_to_json(st))
    assert doc["family"] == tag
    assert doc["p"] == 4


def test_structured_density_consistent_with_lowrank_module():
    rng = np.random.default_rng(27)
    st = make_sn(rng, p=5, k=2)
    theta = rng.standard_normal(5)
    expected = structured_logpdf(
        theta, st.mu, StructuredCov(diag=np.exp(st.log_a), factor=st.u)
    )
    np.testing.assert_allclose(fam.log_density(st, theta), expected, rtol=1e-12)
