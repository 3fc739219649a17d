"""Coefficient maps, assumption validation, and the log-price Euler scheme."""

import numpy as np
import pytest

from volldp.errors import (
    ConfigurationError,
    DomainError,
    SingularDiffusionError,
)
from volldp.gaussian import replay_volterra
from volldp.grids import PathSample, TimeGrid
from volldp.kernels import KernelBank
from volldp.model import (
    AffineMap,
    ConstantMap,
    ExpLinearMap,
    ModelCoefficients,
    ProbeLattice,
    diffusion_path,
    euler_paths_array,
    make_map,
    simulate_correlated,
    simulate_uncorrelated,
    validate_coefficients,
)

from conftest import affine_vol_coeffs, constant_coeffs, exp_vol_coeffs, rl_bank


# ---------------------------------------------------------------------------
# coefficient maps
# ---------------------------------------------------------------------------


def test_constant_map_ignores_input():
    m = ConstantMap(np.array([[2.0, 0.0], [1.0, 3.0]]), in_dim=3)
    y = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(m(y), [[2.0, 0.0], [1.0, 3.0]])
    assert np.all(m.jacobian(y) == 0.0)


def test_affine_map_value_and_jacobian():
    const = np.array([1.0, -2.0])
    lin = np.array([[1.0, 2.0], [0.0, -1.0]])
    m = make_map("affine", shape=(2,), in_dim=2, constant=const, linear=lin)
    y = np.array([0.3, 0.7])
    assert np.allclose(m(y), const + lin @ y)
    assert np.allclose(m.jacobian(y), lin)


def test_exp_linear_map_value_and_jacobian():
    amp = np.array([[0.4]])
    w = np.array([[[2.0]]])
    m = make_map("exp_linear", shape=(1, 1), in_dim=1, amplitude=amp, weights=w)
    y = np.array([0.25])
    want = 0.4 * np.exp(0.5)
    assert np.allclose(m(y), [[want]])
    assert np.allclose(m.jacobian(y), [[[2.0 * want]]])


def test_make_map_validation():
    with pytest.raises(ConfigurationError):
        make_map("nope", shape=(1,), in_dim=1)
    with pytest.raises(ConfigurationError):
        make_map("affine", shape=(2,), in_dim=1, constant=np.zeros(3),
                 linear=np.zeros((3, 1)))
    with pytest.raises(ConfigurationError):
        make_map("exp_linear", shape=(1, 1), in_dim=2,
                 amplitude=np.ones((1, 1)), weights=np.ones((1, 1, 3)))


def test_one_factor_requires_scalar_base_and_valid_rho():
    base = make_map("exp_linear", shape=(1, 1), in_dim=1,
                    amplitude=np.array([[0.3]]), weights=np.array([[[1.0]]]))
    coeffs = ModelCoefficients.one_factor(base, rho=0.5)
    assert coeffs.d == 1 and coeffs.p == 1
    y = np.array([0.2])
    s = float(base(y)[0, 0])
    assert float(coeffs.sigma_tilde(y)[0, 0]) == pytest.approx(0.5 * s)
    assert float(coeffs.sigma(y)[0, 0]) == pytest.approx(
        np.sqrt(1 - 0.25) * s
    )
    with pytest.raises(ConfigurationError):
        ModelCoefficients.one_factor(base, rho=1.0)
    wide = make_map("exp_linear", shape=(1, 2), in_dim=1,
                    amplitude=np.ones((1, 2)), weights=np.ones((1, 2, 1)))
    with pytest.raises(ConfigurationError):
        ModelCoefficients.one_factor(wide, rho=0.5)


def test_one_factor_noise_split():
    # a(y) = sigma sigma^T is the part orthogonal to the volatility driver;
    # the total noise variance sigma_tilde^2 + sigma^2 is rho-independent
    y = np.array([0.4])
    s2 = float(exp_vol_coeffs(0.0).a(y)[0, 0])
    for rho in (0.5, -0.9):
        c = exp_vol_coeffs(rho)
        assert float(c.a(y)[0, 0]) == pytest.approx((1 - rho**2) * s2,
                                                    rel=1e-12)
        total = float(c.sigma_tilde(y)[0, 0] ** 2 + c.sigma(y)[0, 0] ** 2)
        assert total == pytest.approx(s2, rel=1e-12)


# ---------------------------------------------------------------------------
# diffusion matrix along a path
# ---------------------------------------------------------------------------


def test_diffusion_path_identity_coefficients():
    coeffs = constant_coeffs(2, 2, sigma=np.eye(2))
    grid = TimeGrid(1.0, 4)
    phi = PathSample(grid, np.zeros((5, 2)))
    path = diffusion_path(coeffs, phi)
    assert np.allclose(path.a, np.eye(2))
    assert np.allclose(path.a_inv, np.eye(2))
    assert np.allclose(path.lambda_min, 1.0)
    assert np.allclose(path.lambda_max, 1.0)


def test_diffusion_path_scalar_exponential():
    rho = 0.5
    coeffs = exp_vol_coeffs(rho, amplitude=0.3, weight=1.0)
    grid = TimeGrid(1.0, 9)
    values = np.linspace(-1.0, 1.0, 10)[:, None]
    path = diffusion_path(coeffs, PathSample(grid, values))
    want = (1 - rho**2) * (0.3 * np.exp(values[:, 0])) ** 2
    assert np.allclose(path.a[:, 0, 0], want, rtol=1e-12)
    assert np.allclose(path.a_inv[:, 0, 0], 1.0 / want, rtol=1e-12)
    prod = np.einsum("nij,njk->nik", path.a, path.a_inv)
    assert np.allclose(prod, np.eye(1), atol=1e-12)
    assert np.allclose(path.lambda_min, want, rtol=1e-10)
    assert np.allclose(path.lambda_max, want, rtol=1e-10)


def test_diffusion_path_singular_matrix():
    sigma = np.array([[1.0, 0.0], [0.0, 0.0]])  # second row vanishes
    coeffs = constant_coeffs(2, 2, sigma=sigma)
    grid = TimeGrid(1.0, 2)
    with pytest.raises(SingularDiffusionError):
        diffusion_path(coeffs, PathSample(grid, np.zeros((3, 2))))


def test_diffusion_path_dimension_mismatch():
    coeffs = exp_vol_coeffs(0.2)
    grid = TimeGrid(1.0, 2)
    with pytest.raises(DomainError):
        diffusion_path(coeffs, PathSample(grid, np.zeros((3, 2))))


# ---------------------------------------------------------------------------
# assumption validation
# ---------------------------------------------------------------------------


def test_validate_constant_coefficients_pass():
    report = validate_coefficients(constant_coeffs(1, 1, sigma=[[1.0]]))
    assert report.all_passed
    names = {c.name for c in report.checks}
    assert "nondegenerate_diffusion" in names
    assert "polynomial_growth" in names
    assert "diffusion_eigenvalue_bound" in names


def test_validate_exponential_volatility_pass():
    report = validate_coefficients(exp_vol_coeffs(0.5, amplitude=0.3))
    assert report.all_passed


def test_validate_detects_degenerate_diffusion():
    # sigma(y) = y vanishes at the origin, so a(y) is singular there
    lin = make_map("affine", shape=(1, 1), in_dim=1,
                   constant=np.zeros((1, 1)), linear=np.ones((1, 1, 1)))
    coeffs = ModelCoefficients(
        d=1, p=1, mu=ConstantMap(np.zeros(1), 1),
        sigma=lin, sigma_tilde=ConstantMap(np.zeros((1, 1)), 1),
    )
    report = validate_coefficients(coeffs)
    assert not report.all_passed
    check = next(c for c in report.checks if c.name == "nondegenerate_diffusion")
    assert not check.passed
    assert np.allclose(check.worst_point, 0.0)


def test_validate_detects_superpolynomial_growth():
    # exponential volatility violates linear growth far from the origin
    coeffs = exp_vol_coeffs(0.0, amplitude=1.0, weight=2.0,
                            growth_alpha=1.0, growth_m1=5.0, growth_m2=5.0)
    probe = ProbeLattice(low=-10.0, high=10.0)
    report = validate_coefficients(coeffs, probe)
    check = next(c for c in report.checks if c.name == "polynomial_growth")
    assert not check.passed
    assert abs(check.worst_point[0]) == pytest.approx(10.0)


# ---------------------------------------------------------------------------
# Euler scheme
# ---------------------------------------------------------------------------


def test_euler_zero_coefficients_give_zero_paths():
    coeffs = constant_coeffs(1, 1, sigma=[[0.0]])
    bank = rl_bank(0.4)
    grid = TimeGrid(1.0, 8)
    values, _, _ = euler_paths_array(coeffs, bank, grid, 0.5, 6, seed=3)
    assert np.all(values == 0.0)


def test_euler_validation_errors():
    coeffs = constant_coeffs(1, 1, sigma=[[1.0]])
    bank = rl_bank(0.4)
    grid = TimeGrid(1.0, 4)
    with pytest.raises(DomainError):
        euler_paths_array(coeffs, bank, grid, 0.0, 4, seed=0)
    two_factor = KernelBank((rl_bank(0.4)[0], rl_bank(0.6)[0]))
    with pytest.raises(ConfigurationError):
        euler_paths_array(coeffs, two_factor, grid, 0.5, 4, seed=0)


def test_euler_determinism():
    coeffs = exp_vol_coeffs(-0.3)
    bank = rl_bank(0.35)
    grid = TimeGrid(1.0, 12)
    a, _, _ = euler_paths_array(coeffs, bank, grid, 0.4, 5, seed=11)
    b, _, _ = euler_paths_array(coeffs, bank, grid, 0.4, 5, seed=11)
    assert np.array_equal(a, b)


def test_constant_volatility_terminal_law():
    # sigma = 1 constant: Z_T ~ N(-eps^2 T / 2, eps^2 T)
    coeffs = constant_coeffs(1, 1, sigma=[[1.0]])
    bank = rl_bank(0.5)
    grid = TimeGrid(1.0, 16)
    eps, n = 0.7, 40_000
    values, _, _ = euler_paths_array(coeffs, bank, grid, eps, n, seed=21,
                                     correlated=False)
    z = values[:, -1, 0]
    mean_want, var_want = -0.5 * eps**2, eps**2
    mean_se = eps / np.sqrt(n)
    var_se = var_want * np.sqrt(2.0 / (n - 1))
    assert abs(z.mean() - mean_want) <= 3 * mean_se
    assert abs(z.var() - var_want) <= 3 * var_se


def test_discrete_exponential_martingale():
    coeffs = exp_vol_coeffs(0.6, amplitude=0.25)
    bank = rl_bank(0.35)
    grid = TimeGrid(1.0, 32)
    eps, n = 0.5, 60_000
    values, _, _ = euler_paths_array(coeffs, bank, grid, eps, n, seed=9)
    w = np.exp(values[:, -1, 0])
    se = w.std(ddof=1) / np.sqrt(n)
    assert abs(w.mean() - 1.0) <= 3 * se


def test_uncorrelated_ignores_sigma_tilde():
    # with sigma_tilde forced out of the dynamics the correlated=False route
    # must coincide with a model that never had it
    base = exp_vol_coeffs(0.7, amplitude=0.3)
    grid = TimeGrid(1.0, 10)
    bank = rl_bank(0.4)
    a, _, _ = euler_paths_array(base, bank, grid, 0.5, 6, seed=13,
                                correlated=False)
    total = ConstantMap(np.zeros((1, 1)), 1)
    b, _, _ = euler_paths_array(
        ModelCoefficients(d=1, p=1, mu=base.mu, sigma=base.sigma,
                          sigma_tilde=total),
        bank, grid, 0.5, 6, seed=13, correlated=False,
    )
    assert np.array_equal(a, b)


def test_zero_sigma_tilde_correlated_matches_uncorrelated():
    coeffs = exp_vol_coeffs(0.0, amplitude=0.3)
    bank = rl_bank(0.35)
    grid = TimeGrid(1.0, 12)
    a, _, _ = euler_paths_array(coeffs, bank, grid, 0.5, 8, seed=7,
                                correlated=True)
    b, _, _ = euler_paths_array(coeffs, bank, grid, 0.5, 8, seed=7,
                                correlated=False)
    assert np.max(np.abs(a - b)) == 0.0


def test_correlated_noise_decomposition():
    # conditionally on the drivers, the sigma_tilde contribution enters
    # through the same Brownian increments that generated the volatility
    rho = 0.8
    coeffs = affine_vol_coeffs(rho, const=0.5, slope=0.0)  # constant vol 0.5
    bank = rl_bank(0.5)
    grid = TimeGrid(1.0, 8)
    eps = 0.6
    values, increments, dw, _, _ = euler_paths_array(
        coeffs, bank, grid, eps, 500, seed=19, correlated=True,
        return_drivers=True,
    )
    # reconstruct Z_T by hand from the stored increments
    s = 0.5
    z_want = (
        -0.5 * eps**2 * s**2
        + eps * s * (rho * increments.sum(axis=1)
                     + np.sqrt(1 - rho**2) * dw.sum(axis=1))
    )[:, 0]
    assert np.allclose(values[:, -1, 0], z_want, atol=1e-12)


def test_simulate_wrappers_and_replay():
    coeffs = exp_vol_coeffs(-0.5, amplitude=0.2)
    bank = rl_bank(0.3)
    grid = TimeGrid(1.0, 10)
    paths = simulate_uncorrelated(coeffs, bank, grid, 0.4, 3, seed=23)
    assert len(paths) == 3
    assert paths[0].values.shape == (11, 1)

    pairs = simulate_correlated(coeffs, bank, grid, 0.4, 3, seed=23)
    assert len(pairs) == 3
    for price, joint in pairs:
        assert price.values.shape == (11, 1)
        rebuilt = replay_volterra(bank, joint)
        assert np.array_equal(rebuilt, joint.volterra.values)
        # brownian is the running sum of the stored increments (up to the
        # rounding of cumulative summation)
        assert joint.brownian.values[0, 0] == 0.0
        assert np.allclose(
            joint.brownian.values[1:] - joint.brownian.values[:-1],
            joint.increments,
            atol=1e-14,
        )
