"""Sampling and covariance of the joint driver (B, Bhat).

Bhat_l(t) = int_0^t K_l(t, s) dB_l(s) is discretized on the grid by a
hybrid convolution scheme.  For every step cell [t_j, t_{j+1}] the sampler
carries two Gaussians:

* the plain increment  dB_j,
* the power-weighted increment  V_j = int_cell (t_{j+1} - s)^kappa dB_l(s),

drawn jointly with their exact 2x2 covariance (kappa is the kernel's
diagonal exponent H - 1/2).  The convolution then reads

    Bhat(t_i) = sum_{j <= i-2} w_ij dB_j + A_i V_{i-1},

where w_ij is the cell average of K(t_i, .) over cell j (a 4-node
Gauss-Legendre value) and A_i is the calibrated power-law amplitude of the
kernel in the cell adjacent to the diagonal.  The adjacent-cell integral is
thereby exact for power-law kernels, which keeps the sampled covariance
faithful to the continuous one even at the first grid nodes.

Randomness is counter-based: path k reads a dedicated counter range of a
Philox stream keyed by the seed, so path sets are reproducible and
independent of batch size or generation order.  Normals are produced from
64-bit uniforms through the inverse normal CDF so each path consumes a
fixed, layout-stable number of words.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri
from scipy.stats import ks_2samp

from .errors import ConfigurationError, DomainError, QuadratureError
from .grids import JointSample, PathSample, TimeGrid
from .kernels import KernelBank, VolterraKernel, kernel_l2_slice

_GL4 = np.polynomial.legendre.leggauss(4)


# ---------------------------------------------------------------------------
# counter-based normal streams
# ---------------------------------------------------------------------------


def path_normals(seed: int, first_path: int, n_paths: int, n_draws: int) -> np.ndarray:
    """Standard normals for paths [first_path, first_path + n_paths).

    Path k owns the Philox counter blocks [k * stride, (k + 1) * stride) with
    stride = ceil(n_draws / 4), so the values depend only on (seed, k, slot)
    and stay identical under any batching of the path range.
    """
    if n_draws <= 0 or n_paths <= 0:
        raise DomainError("n_paths and n_draws must be positive")
    stride = (n_draws + 3) // 4
    bg = np.random.Philox(key=int(seed) & ((1 << 64) - 1))
    bg.advance(first_path * stride)
    raw = bg.random_raw(n_paths * stride * 4).reshape(n_paths, stride * 4)
    u = ((raw[:, :n_draws] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


# ---------------------------------------------------------------------------
# kernel discretization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelDiscretization:
    """Convolution weights of one kernel on one grid.

    mean_weights[i, j] multiplies dB_j in Bhat(t_i) for j <= i - 2;
    edge_coeff[i] multiplies the adjacent-cell Gaussian V_{i-1}.  kappa_c and
    kappa_v are the cell moments Cov(dB, V) and Var(V).
    """

    grid: TimeGrid
    kappa: float
    mean_weights: np.ndarray  # (N + 1, N)
    edge_coeff: np.ndarray    # (N + 1,)
    kappa_c: float
    kappa_v: float

    @property
    def hat_weights(self) -> np.ndarray:
        """Cell integrals c_ij with  fhat(t_i) = sum_j c_ij fdot(t_j)."""
        c = self.mean_weights * self.grid.dt
        n = self.grid.n_steps
        idx = np.arange(1, n + 1)
        c[idx, idx - 1] = self.edge_coeff[1:] * self.kappa_c
        return c

    def convolve_increments(
        self, increments: np.ndarray, singular: np.ndarray
    ) -> np.ndarray:
        """Bhat at every node for stacked paths (leading axis = path)."""
        vals = increments @ self.mean_weights.T
        vals[..., 1:] += singular * self.edge_coeff[1:]
        return vals

    def row_l2(self) -> np.ndarray:
        """Exact second moment of the discretized Bhat at every node."""
        dt = self.grid.dt
        quad = np.sum(self.mean_weights**2, axis=1) * dt
        quad[1:] += self.edge_coeff[1:] ** 2 * self.kappa_v
        return quad


@lru_cache(maxsize=64)
def discretize_kernel(kernel: VolterraKernel, grid: TimeGrid) -> KernelDiscretization:
    """Build (and cache) the convolution weights of ``kernel`` on ``grid``."""
    n, dt, t = grid.n_steps, grid.dt, grid.nodes
    if grid.horizon > kernel.horizon * (1 + 1e-12):
        raise ConfigurationError(
            f"grid horizon {grid.horizon} exceeds kernel horizon {kernel.horizon}"
        )
    kappa = kernel.singular_exponent
    xg, wg = _GL4
    weights = np.zeros((n + 1, n))
    for i in range(2, n + 1):
        cells = np.arange(i - 1)
        u = t[cells][None, :] + 0.5 * dt * (xg[:, None] + 1.0)
        vals = kernel.eval(t[i], u)
        weights[i, : i - 1] = 0.5 * np.sum(wg[:, None] * vals, axis=0)
    edge = np.zeros(n + 1)
    for i in range(1, n + 1):
        val = kernel.eval(t[i], t[i - 1])
        if np.isfinite(val):
            edge[i] = val / dt**kappa
        else:
            edge[i] = kernel.eval(t[i], t[i] - 0.5 * dt) / (0.5 * dt) ** kappa
    kappa_c = dt ** (kappa + 1.0) / (kappa + 1.0)
    kappa_v = dt ** (2.0 * kappa + 1.0) / (2.0 * kappa + 1.0)
    return KernelDiscretization(
        grid=grid,
        kappa=kappa,
        mean_weights=weights,
        edge_coeff=edge,
        kappa_c=kappa_c,
        kappa_v=kappa_v,
    )


def bank_discretizations(bank: KernelBank, grid: TimeGrid) -> list:
    return [discretize_kernel(k, grid) for k in bank]


# ---------------------------------------------------------------------------
# joint sampling
# ---------------------------------------------------------------------------


def draw_driver_arrays(
    bank: KernelBank,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    first_path: int = 0,
    extra_draws: int = 0,
    per_path_convolve: bool = False,
):
    """Vectorized draw of (dB, V, Bhat[, extras]) for a block of paths.

    Returns arrays of shapes (n, N, p), (n, N, p), (n, N + 1, p) and, when
    ``extra_draws`` > 0, the remaining standard normals of each path's
    budget, shape (n, extra_draws).  The per-path word budget is
    N * (2 p) + extra_draws, fixed by the call signature.

    With ``per_path_convolve`` the convolution runs one path at a time with
    the same matrix product ``replay_volterra`` uses, so that stored Bhat
    values reproduce bit for bit under replay.  The batched default is
    faster for Monte Carlo blocks but may differ from the replay product in
    the last ulp (BLAS blocking depends on operand shape).
    """
    n, p = grid.n_steps, bank.n_factors
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    n_draws = n * 2 * p + extra_draws
    z = path_normals(seed, first_path, n_paths, n_draws)
    incr_z = z[:, : n * p].reshape(n_paths, n, p)
    edge_z = z[:, n * p : 2 * n * p].reshape(n_paths, n, p)
    extras = z[:, 2 * n * p :] if extra_draws else None
    dt = grid.dt
    increments = incr_z * np.sqrt(dt)
    discs = bank_discretizations(bank, grid)
    singular = np.empty_like(increments)
    volterra = np.empty((n_paths, n + 1, p))
    for ell, disc in enumerate(discs):
        rho = disc.kappa_c / dt
        resid = disc.kappa_v - disc.kappa_c**2 / dt
        resid = np.sqrt(resid) if resid > 0.0 else 0.0
        singular[:, :, ell] = rho * increments[:, :, ell] + resid * edge_z[:, :, ell]
        if per_path_convolve:
            for k in range(n_paths):
                volterra[k, :, ell] = disc.convolve_increments(
                    increments[k, None, :, ell], singular[k, None, :, ell]
                )[0]
        else:
            volterra[:, :, ell] = disc.convolve_increments(
                increments[:, :, ell], singular[:, :, ell]
            )
    return increments, singular, volterra, extras


def sample_joint_paths(
    bank: KernelBank, grid: TimeGrid, n_paths: int, seed: int
) -> list:
    """Draw joint (B, Bhat) paths; returns a list of ``JointSample``."""
    increments, singular, volterra, _ = draw_driver_arrays(
        bank, grid, n_paths, seed, per_path_convolve=True
    )
    brownian = np.zeros_like(volterra)
    brownian[:, 1:, :] = np.cumsum(increments, axis=1)
    return [
        JointSample(
            grid=grid,
            brownian=PathSample(grid, brownian[k]),
            volterra=PathSample(grid, volterra[k]),
            increments=increments[k],
            singular_increments=singular[k],
        )
        for k in range(n_paths)
    ]


def replay_volterra(bank: KernelBank, sample: JointSample) -> np.ndarray:
    """Recompute Bhat from the stored increments of a ``JointSample``.

    The result must match ``sample.volterra.values`` bit for bit; tests use
    this to pin down the convolution contract.
    """
    discs = bank_discretizations(bank, sample.grid)
    out = np.empty_like(sample.volterra.values)
    for ell, disc in enumerate(discs):
        out[:, ell] = disc.convolve_increments(
            sample.increments[None, :, ell], sample.singular_increments[None, :, ell]
        )[0]
    return out


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------


@dataclass
class CovarianceBlocks:
    """Block-diagonal covariance of (Bhat_l(t_i))_{l, i >= 1}."""

    grid: TimeGrid
    blocks: np.ndarray  # (p, N, N)

    def dense(self) -> np.ndarray:
        p, n, _ = self.blocks.shape
        out = np.zeros((p * n, p * n))
        for ell in range(p):
            out[ell * n : (ell + 1) * n, ell * n : (ell + 1) * n] = self.blocks[ell]
        return out


def covariance_matrix(
    bank: KernelBank, grid: TimeGrid, n_quad: int = 256
) -> CovarianceBlocks:
    """Covariance blocks  k(t, s) = int_0^min(t,s) K(t, u) K(s, u) du.

    Uses the same singularity-splitting rule as ``kernel_l2_slice`` so the
    diagonal coincides with the slice norm exactly.  Raises
    ``QuadratureError`` when a block comes out non-finite or fails the
    positive-semidefiniteness tolerance (min eigenvalue >= -1e-10 * trace).
    """
    if n_quad < 2:
        raise DomainError(f"n_quad must be >= 2, got {n_quad}")
    n, p = grid.n_steps, bank.n_factors
    t = grid.nodes
    blocks = np.zeros((p, n, n))
    for ell, kernel in enumerate(bank):
        kappa = kernel.singular_exponent
        for j in range(1, n + 1):
            s = t[j]
            h = s / n_quad
            mids = (np.arange(n_quad - 1) + 0.5) * h
            upper = t[j:]
            vals_i = kernel.eval(upper[:, None], mids[None, :])
            vals_j = kernel.eval(s, mids)
            interior = (vals_i @ vals_j) * h
            a_edge = _edge_for(kernel, s, h)
            entries = interior.copy()
            # singular cell [s - h, s]
            entries[0] += a_edge**2 * h ** (2 * kappa + 1) / (2 * kappa + 1)
            if upper.size > 1:
                frozen = kernel.eval(upper[1:], s - h)
                entries[1:] += (
                    frozen * a_edge * h ** (kappa + 1) / (kappa + 1)
                )
            blocks[ell, j - 1, j - 1 :] = entries
            blocks[ell, j - 1 :, j - 1] = entries
    if not np.all(np.isfinite(blocks)):
        raise QuadratureError("covariance quadrature produced non-finite entries")
    for ell in range(p):
        eigs = np.linalg.eigvalsh(blocks[ell])
        tol = 1e-10 * np.trace(blocks[ell])
        if eigs[0] < -tol:
            raise QuadratureError(
                f"covariance block {ell} fails PSD tolerance: "
                f"min eig {eigs[0]:.3e} < {-tol:.3e}"
            )
    return CovarianceBlocks(grid=grid, blocks=blocks)


def _edge_for(kernel: VolterraKernel, s: float, h: float) -> float:
    kappa = kernel.singular_exponent
    val = kernel.eval(s, s - h)
    if np.isfinite(val):
        return float(val) / h**kappa
    return float(kernel.eval(s, s - 0.5 * h)) / (0.5 * h) ** kappa


def empirical_covariance(samples: list, component: str = "volterra") -> np.ndarray:
    """Unbiased sample covariance per factor across paths, node pair by pair.

    Returns an array of shape (p, N + 1, N + 1).  Requires at least two
    samples on a common grid; ``component`` selects ``"volterra"`` or
    ``"brownian"``.
    """
    if component not in ("volterra", "brownian"):
        raise DomainError(f"unknown component {component!r}")
    if len(samples) < 2:
        raise DomainError("empirical covariance needs at least two samples")
    grid = samples[0].grid
    if any(s.grid != grid for s in samples):
        raise DomainError("samples live on different grids")
    stacked = np.stack([getattr(s, component).values for s in samples])  # (n, N+1, p)
    n_samp, n_nodes, p = stacked.shape
    centered = stacked - stacked.mean(axis=0)
    out = np.empty((p, n_nodes, n_nodes))
    for ell in range(p):
        x = centered[:, :, ell]
        out[ell] = x.T @ x / (n_samp - 1)
    return out


def sample_volterra_cholesky(
    bank: KernelBank,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    n_quad: int = 256,
) -> np.ndarray:
    """Exact-covariance Gaussian sampler used as a cross-check oracle.

    Draws Bhat from a Cholesky factor of the quadrature covariance, shape
    (n_paths, N + 1, p).  This is an independent route from the convolution
    sampler and is kept solely for distributional cross-checks.
    """
    cov = covariance_matrix(bank, grid, n_quad)
    n, p = grid.n_steps, bank.n_factors
    chols = []
    for ell in range(p):
        block = cov.blocks[ell]
        jitter = 1e-12 * max(np.trace(block), 1.0)
        chols.append(np.linalg.cholesky(block + jitter * np.eye(n)))
    z = path_normals(seed, 0, n_paths, n * p).reshape(n_paths, n, p)
    out = np.zeros((n_paths, n + 1, p))
    for ell in range(p):
        out[:, 1:, ell] = z[:, :, ell] @ chols[ell].T
    return out


def marginal_ks_check(
    bank: KernelBank,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    factor: int = 0,
    n_quad: int = 256,
):
    """Two-sample KS of Bhat(T): convolution sampler vs Cholesky oracle."""
    _, _, volterra, _ = draw_driver_arrays(bank, grid, n_paths, seed)
    chol = sample_volterra_cholesky(bank, grid, n_paths, seed + 1, n_quad)
    return ks_2samp(volterra[:, -1, factor], chol[:, -1, factor])


def terminal_variance_bound(bank: KernelBank, n_quad: int = 512) -> float:
    """sup over t of sum_l int_0^t K_l(t, s)^2 ds (crude grid sup).

    This constant bounds |fhat(t)|^2 / |f|_H1^2; it is evaluated on a probe
    grid of 65 nodes.
    """
    probes = np.linspace(0.0, bank.horizon, 65)[1:]
    total = np.zeros_like(probes)
    for kernel in bank:
        total += np.array([kernel_l2_slice(kernel, t, n_quad) for t in probes])
    return float(np.max(total))
