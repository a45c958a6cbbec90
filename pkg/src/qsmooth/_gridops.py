"""Shared per-scenario caches for the grid filters (internal).

Holds the Hamiltonian stack over the grid, the kernel cache, and small helpers
for prior densities and grid moments.  Forward and backward passes must share
one kernel matrix object so their mixing steps are exact transposes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .classical import KernelCache
from .errors import InvalidGridError
from .scenario import Scenario

OFFGRID_MASS_TOL = 1e-6


class GridOps:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        grid = scenario.grid
        self.H_all = np.stack([scenario.quantum.hamiltonian(x) for x in grid.points])
        self.dissipators = scenario.quantum.dissipators
        self.hbar = scenario.quantum.hbar
        self.kernels = KernelCache(scenario.classical, grid)

    def kernel(self, t, dt):
        return self.kernels.kernel(t, dt)

    def kernel_transpose(self, t, dt):
        return self.kernels.kernel_transpose(t, dt)


def gaussian_prior_density(scenario: Scenario) -> np.ndarray:
    """Prior density over the grid; raises if too much prior mass is off-grid."""
    cl, grid = scenario.classical, scenario.grid
    mean, cov = cl.initial_mean, cl.initial_cov
    stds = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    offgrid = 0.0
    for dim in range(grid.ndim):
        if stds[dim] == 0.0:
            inside = grid.mins[dim] <= mean[dim] <= grid.maxs[dim]
            offgrid += 0.0 if inside else 1.0
            continue
        lo = (grid.mins[dim] - 0.5 * grid.spacings[dim] - mean[dim]) / stds[dim]
        hi = (grid.maxs[dim] + 0.5 * grid.spacings[dim] - mean[dim]) / stds[dim]
        offgrid += ndtr(lo) + (1.0 - ndtr(hi))
    if offgrid > OFFGRID_MASS_TOL:
        raise InvalidGridError(
            f"prior mass off-grid ~{offgrid:.2e} exceeds {OFFGRID_MASS_TOL}")
    diff = grid.points - mean
    if not np.all(stds == 0.0):
        cov_reg = cov + np.eye(grid.ndim) * max(1e-30, 1e-12 * float(np.max(np.diag(cov))))
        qf = np.einsum("ki,ki->k", diff, np.linalg.solve(cov_reg, diff.T).T)
        qf -= qf.min()   # guard the narrow-prior underflow
        dens = np.exp(-0.5 * qf)
        total = dens.sum()
        if total > 0 and np.isfinite(total):
            return dens / (total * grid.cell_volume)
    # degenerate prior: all mass in the nearest cell
    dens = np.zeros(grid.n_points)
    dens[np.argmin(np.linalg.norm(diff, axis=1))] = 1.0 / grid.cell_volume
    return dens


def grid_moments(grid, weights) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a (possibly unnormalized) grid density."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("cannot take moments of a nonpositive density")
    p = w / total
    mean = p @ grid.points
    diff = grid.points - mean
    cov = (diff * p[:, None]).T @ diff
    return mean, 0.5 * (cov + cov.T)
