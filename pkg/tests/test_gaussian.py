"""Gaussian driver sampling, covariance quadrature, and replay contracts."""

import numpy as np
import pytest
from scipy import stats

from volldp.errors import DomainError, QuadratureError
from volldp.gaussian import (
    covariance_matrix,
    draw_driver_arrays,
    empirical_covariance,
    marginal_ks_check,
    path_normals,
    replay_volterra,
    sample_joint_paths,
    sample_volterra_cholesky,
    terminal_variance_bound,
)
from volldp.grids import TimeGrid
from volldp.kernels import KernelBank, kernel_l2_slice, make_kernel

from conftest import rl_bank, rl_kernel


def mixed_bank(horizon=0.9):
    return KernelBank((
        make_kernel("riemann_liouville", hurst=0.3, scale=1.0, horizon=horizon),
        make_kernel("log_fbm", hurst=0.4, scale=1.0, horizon=horizon,
                    log_exponent=2.0),
        make_kernel("molchan_golosov", hurst=0.72, scale=1.0, horizon=horizon),
        make_kernel("fractional_ou", hurst=0.35, scale=1.0, horizon=horizon,
                    mean_reversion=1.3),
    ))


# ---------------------------------------------------------------------------
# covariance quadrature
# ---------------------------------------------------------------------------


def test_divisibility_error_names_both_counts():
    grid = TimeGrid(1.0, 100)
    with pytest.raises(Exception) as exc:
        grid.require_divisible(16)
    assert "16" in str(exc.value) and "100" in str(exc.value)


def test_brownian_covariance_closed_form():
    # K = 1.3 constant: Cov(Bhat(t_i), Bhat(t_j)) = 1.69 min(t_i, t_j)
    bank = rl_bank(0.5, scale=1.3)
    grid = TimeGrid(1.0, 8)
    cov = covariance_matrix(bank, grid)
    t = grid.nodes[1:]
    want = 1.69 * np.minimum.outer(t, t)
    assert np.allclose(cov.blocks[0], want, atol=1e-10)


def test_covariance_diagonal_matches_slice_norm():
    bank = mixed_bank()
    grid = TimeGrid(0.9, 6)
    cov = covariance_matrix(bank, grid, n_quad=256)
    for ell, kernel in enumerate(bank):
        for i, t in enumerate(grid.nodes[1:]):
            want = kernel_l2_slice(kernel, t, n_quad=256)
            assert cov.blocks[ell][i, i] == pytest.approx(want, rel=5e-3)


def test_covariance_dense_is_block_diagonal():
    bank = KernelBank((rl_kernel(0.3), rl_kernel(0.75)))
    grid = TimeGrid(1.0, 5)
    cov = covariance_matrix(bank, grid)
    dense = cov.dense()
    n = grid.n_steps
    assert dense.shape == (2 * n, 2 * n)
    assert np.all(dense[:n, n:] == 0.0)
    assert np.all(dense[n:, :n] == 0.0)
    assert np.array_equal(dense[:n, :n], cov.blocks[0])


def test_covariance_quadrature_validation():
    bank = rl_bank(0.4)
    with pytest.raises(DomainError):
        covariance_matrix(bank, TimeGrid(1.0, 4), n_quad=1)


def test_covariance_is_positive_semidefinite():
    cov = covariance_matrix(mixed_bank(), TimeGrid(0.9, 10))
    for block in cov.blocks:
        eigvals = np.linalg.eigvalsh(block)
        assert eigvals.min() >= -1e-10 * max(eigvals.max(), 1.0)


# ---------------------------------------------------------------------------
# hybrid sampler
# ---------------------------------------------------------------------------


def test_flat_kernel_reproduces_brownian_motion():
    bank = rl_bank(0.5)
    grid = TimeGrid(1.0, 32)
    samples = sample_joint_paths(bank, grid, 16, seed=5)
    for joint in samples:
        assert np.allclose(
            joint.volterra.values, joint.brownian.values, atol=1e-12
        )


def test_sampler_determinism():
    bank = mixed_bank()
    grid = TimeGrid(0.9, 12)
    a = sample_joint_paths(bank, grid, 4, seed=42)
    b = sample_joint_paths(bank, grid, 4, seed=42)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.volterra.values, sb.volterra.values)
        assert np.array_equal(sa.increments, sb.increments)
    c = sample_joint_paths(bank, grid, 4, seed=43)
    assert not np.array_equal(a[0].increments, c[0].increments)


def test_first_path_block_consistency():
    # drawing paths [2, 6) directly must reproduce rows 2..5 of a batch draw
    bank = rl_bank(0.3)
    grid = TimeGrid(1.0, 10)
    full = draw_driver_arrays(bank, grid, 6, seed=9, per_path_convolve=True)
    tail = draw_driver_arrays(
        bank, grid, 4, seed=9, first_path=2, per_path_convolve=True
    )
    for name in ("increments", "singular", "volterra"):
        idx = {"increments": 0, "singular": 1, "volterra": 2}[name]
        assert np.array_equal(full[idx][2:], tail[idx]), name


def test_path_normals_counter_layout():
    # the per-path stream depends only on (seed, path index, draw count)
    a = path_normals(seed=3, first_path=0, n_paths=5, n_draws=17)
    b = path_normals(seed=3, first_path=2, n_paths=3, n_draws=17)
    assert np.array_equal(a[2:], b)
    assert a.shape == (5, 17)


def test_increment_replay_bitwise():
    bank = mixed_bank()
    grid = TimeGrid(0.9, 14)
    for joint in sample_joint_paths(bank, grid, 3, seed=17):
        rebuilt = replay_volterra(bank, joint)
        assert np.array_equal(rebuilt, joint.volterra.values)


def test_terminal_variance_matches_quadrature():
    # N = 64 keeps the scheme's within-cell averaging bias below the Monte
    # Carlo noise floor for every kernel family
    bank = mixed_bank()
    grid = TimeGrid(0.9, 64)
    n = 100_000
    volterra = draw_driver_arrays(bank, grid, n, seed=123)[2]
    for ell, kernel in enumerate(bank):
        want = kernel_l2_slice(kernel, grid.horizon, n_quad=4096)
        got = float(np.var(volterra[:, -1, ell]))
        se = want * np.sqrt(2.0 / (n - 1))
        assert abs(got - want) <= 3.0 * se


def test_empirical_covariance_fidelity():
    # compare sampler covariance to quadrature covariance at Gaussian-oracle
    # standard errors: se_ij = sqrt((C_ii C_jj + C_ij^2) / n)
    bank = rl_bank(0.75)
    grid = TimeGrid(1.0, 16)
    n = 30_000
    samples = sample_joint_paths(bank, grid, n, seed=2024)
    emp = empirical_covariance(samples, component="volterra")
    want = covariance_matrix(bank, grid).blocks[0]
    got = emp[0][1:, 1:]
    se = np.sqrt(
        (np.outer(np.diag(want), np.diag(want)) + want**2) / n
    )
    assert np.max(np.abs(got - want) / se) <= 4.0


def test_empirical_covariance_validation():
    bank = rl_bank(0.4)
    grid = TimeGrid(1.0, 6)
    samples = sample_joint_paths(bank, grid, 4, seed=1)
    with pytest.raises(DomainError):
        empirical_covariance(samples[:1])
    with pytest.raises(DomainError):
        empirical_covariance([])
    other = sample_joint_paths(bank, TimeGrid(1.0, 7), 4, seed=1)
    with pytest.raises(DomainError):
        empirical_covariance([samples[0], other[0]])
    with pytest.raises(DomainError):
        empirical_covariance(samples, component="nope")


def test_empirical_covariance_brownian_component():
    bank = rl_bank(0.3)
    grid = TimeGrid(1.0, 6)
    n = 50_000
    samples = sample_joint_paths(bank, grid, n, seed=77)
    emp = empirical_covariance(samples, component="brownian")[0]
    t = grid.nodes
    want = np.minimum.outer(t, t)
    se = np.sqrt((np.outer(np.diag(want), np.diag(want)) + want**2) / n)
    gaps = np.abs(emp - want)[1:, 1:] / se[1:, 1:]
    assert np.max(gaps) <= 4.0


def test_marginal_gaussianity_proxy():
    bank = rl_bank(0.3)
    grid = TimeGrid(1.0, 12)
    samples = sample_joint_paths(bank, grid, 50_000, seed=31)
    terminal = np.array([s.volterra.values[-1, 0] for s in samples])
    z = (terminal - terminal.mean()) / terminal.std()
    assert abs(stats.skew(z)) < 0.05
    assert abs(stats.kurtosis(z, fisher=True)) < 0.1


def test_marginal_ks_check_passes():
    bank = rl_bank(0.35)
    grid = TimeGrid(1.0, 10)
    result = marginal_ks_check(bank, grid, 4000, seed=8)
    assert result.pvalue > 0.01


def test_path_regularity_proxy():
    # The mean-square increment E|Bhat(t+dt) - Bhat(t)|^2 scales like
    # dt^(2 H); fit the exponent across refinements and compare to H.
    hurst = 0.3
    bank = rl_bank(hurst)
    log_dt, log_msq = [], []
    for n_steps in (64, 256, 1024):
        grid = TimeGrid(1.0, n_steps)
        volterra = draw_driver_arrays(bank, grid, 64, seed=6)[2]
        diffs = np.diff(volterra[..., 0], axis=1)
        log_dt.append(np.log(grid.dt))
        log_msq.append(np.log(np.mean(diffs**2)))
    gamma = np.polyfit(log_dt, log_msq, 1)[0] / 2.0
    assert abs(gamma - hurst) < 0.15


def test_terminal_variance_bound_brownian():
    bank = rl_bank(0.5, horizon=2.0)
    assert terminal_variance_bound(bank) == pytest.approx(2.0, rel=1e-6)


def test_terminal_variance_bound_dominates_slices():
    bank = mixed_bank()
    bound = terminal_variance_bound(bank)
    for kernel in bank:
        for t in np.linspace(0.0, 0.9, 7):
            assert kernel_l2_slice(kernel, t) <= bound * (1 + 1e-9)


# ---------------------------------------------------------------------------
# dual-route sampling cross-check
# ---------------------------------------------------------------------------


def test_cholesky_route_matches_hybrid_route_marginals():
    # independent covariance-based sampler agrees with the hybrid scheme in
    # distribution at the terminal node (two-sample KS)
    bank = rl_bank(0.75)
    grid = TimeGrid(1.0, 16)
    n = 4000
    hybrid = sample_joint_paths(bank, grid, n, seed=101)
    hyb_term = np.array([s.volterra.values[-1, 0] for s in hybrid])
    chol = sample_volterra_cholesky(bank, grid, n, seed=707)
    result = stats.ks_2samp(hyb_term, chol[:, -1, 0])
    assert result.pvalue > 0.01


def test_cholesky_sampler_covariance():
    bank = rl_bank(0.4)
    grid = TimeGrid(1.0, 6)
    n = 40_000
    chol = sample_volterra_cholesky(bank, grid, n, seed=55)
    want = covariance_matrix(bank, grid).blocks[0]
    got = np.cov(chol[:, 1:, 0].T, bias=False)
    se = np.sqrt((np.outer(np.diag(want), np.diag(want)) + want**2) / n)
    assert np.max(np.abs(got - want) / se) <= 4.0
