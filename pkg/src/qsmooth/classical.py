"""Classical Markov signal model: Ito SDE, sample paths, grid transition kernels.

The transition kernel is a row-stochastic Markov matrix on a uniform grid whose
rows reproduce the one-step drift and diffusion moments.  Rows are Gaussian
densities where the per-step standard deviation resolves the cell size; below
that the pointwise Gaussian misstates the moments by orders of magnitude, so a
nonnegative three-point stencil with exact first and second moments is used
instead (zero-diffusion rows degenerate to the interpolation stencil).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalOverflowError

# per-step sigma/cell ratio above which pointwise Gaussian rows are accurate
# (Poisson-summation error < 1e-5 at 0.8)
GAUSSIAN_ROW_THRESHOLD = 0.8


@dataclass
class KernelStats:
    """Warning counters recorded while building kernel rows."""

    boundary_clamps: int = 0
    under_resolved_rows: int = 0


@dataclass(frozen=True)
class ClassicalModel:
    """Ito SDE dx = A(x,t) dt + B(x,t) dW,  E[dW dW^T] = Q dt.

    ``drift`` and ``noise_gain`` must broadcast over leading axes: drift maps
    (..., n) -> (..., n), noise_gain maps (..., n) -> (..., n, w).  The prior
    for x(t0) is Gaussian with ``initial_mean``/``initial_cov``.
    """

    n: int
    drift: Callable
    noise_gain: Callable
    wiener_cov: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    time_invariant: bool = True

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.wiener_cov, dtype=float))
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12 * max(1.0, np.max(np.abs(Q))):
            raise ValueError("wiener covariance Q must be positive-semidefinite")
        object.__setattr__(self, "wiener_cov", Q)
        object.__setattr__(self, "initial_mean", np.atleast_1d(np.asarray(self.initial_mean, dtype=float)))
        cov = np.atleast_2d(np.asarray(self.initial_cov, dtype=float))
        object.__setattr__(self, "initial_cov", cov)
        if self.initial_mean.shape != (self.n,) or cov.shape != (self.n, self.n):
            raise ValueError("prior mean/cov shape does not match the state dimension")

    @property
    def n_wiener(self) -> int:
        return self.wiener_cov.shape[0]

    def diffusion(self, x: np.ndarray, t: float) -> np.ndarray:
        """B Q B^T at (x, t); shape (..., n, n)."""
        B = np.asarray(self.noise_gain(np.asarray(x, dtype=float), t), dtype=float)
        return B @ self.wiener_cov @ np.swapaxes(B, -1, -2)


def linear_model(n: int, A_matrix, B_matrix, Q, initial_mean, initial_cov) -> ClassicalModel:
    """Convenience constructor for dx = A x dt + B dW with constant matrices."""
    A_matrix = np.atleast_2d(np.asarray(A_matrix, dtype=float))
    B_matrix = np.atleast_2d(np.asarray(B_matrix, dtype=float))
    return ClassicalModel(
        n=n,
        drift=lambda x, t: x @ A_matrix.T,
        noise_gain=lambda x, t: np.broadcast_to(B_matrix, x.shape[:-1] + B_matrix.shape),
        wiener_cov=Q,
        initial_mean=initial_mean,
        initial_cov=initial_cov,
    )


@dataclass(frozen=True)
class ClassicalGrid:
    """Uniform rectangular grid over the classical state space."""

    mins: tuple
    maxs: tuple
    counts: tuple
    points: np.ndarray = field(init=False, repr=False)
    spacings: tuple = field(init=False)
    cell_volume: float = field(init=False)

    def __post_init__(self):
        mins = tuple(float(v) for v in self.mins)
        maxs = tuple(float(v) for v in self.maxs)
        counts = tuple(int(c) for c in self.counts)
        if not (len(mins) == len(maxs) == len(counts)):
            raise ValueError("grid dimension specs must have equal lengths")
        for lo, hi, c in zip(mins, maxs, counts):
            if hi <= lo:
                raise ValueError("grid max must exceed min")
            if c < 3:
                raise ValueError("grids need at least 3 points per dimension")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "counts", counts)
        axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(mins, maxs, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        object.__setattr__(self, "points", pts)
        spacings = tuple((hi - lo) / (c - 1) for lo, hi, c in zip(mins, maxs, counts))
        object.__setattr__(self, "spacings", spacings)
        object.__setattr__(self, "cell_volume", float(np.prod(spacings)))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def axis(self, dim: int) -> np.ndarray:
        return np.linspace(self.mins[dim], self.maxs[dim], self.counts[dim])

    @classmethod
    def regular(cls, specs: Sequence) -> "ClassicalGrid":
        """Build from a list of (min, max, count) triples."""
        mins, maxs, counts = zip(*specs)
        return cls(mins=mins, maxs=maxs, counts=counts)


def euler_maruyama_step(model: ClassicalModel, x: np.ndarray, t: float, dt: float,
                        dW: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama step x + A(x,t) dt + B(x,t) dW.

    ``dW`` is caller-supplied (covariance Q dt), which keeps the integrator
    deterministic for replay.  Broadcasts over leading axes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    A = np.asarray(model.drift(x, t), dtype=float)
    B = np.asarray(model.noise_gain(x, t), dtype=float)
    out = x + A * dt + np.einsum("...nw,...w->...n", B, np.asarray(dW, dtype=float))
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(out)))[0]
        raise NumericalOverflowError(f"x[{bad[-1]}]", f"at t={t}")
    return out


def sample_wiener(rng: np.random.Generator, Q: np.ndarray, dt: float, size=None) -> np.ndarray:
    """Draw dW ~ N(0, Q dt)."""
    Q = np.atleast_2d(Q)
    w = Q.shape[0]
    shape = (w,) if size is None else (tuple(np.atleast_1d(size)) + (w,))
    white = rng.standard_normal(shape)
    # Cholesky with PSD fallback for rank-deficient Q
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(Q)
        L = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
    return np.sqrt(dt) * (white @ L.T)


def _axis_weights(coords: np.ndarray, h: float, mu: float, v: float,
                  stats: KernelStats) -> np.ndarray:
    """1-d row weights with mean ``mu`` and variance ``v`` on uniform ``coords``.

    Chooses between a pointwise Gaussian (resolved), an exact-moment 3-point
    stencil (under-resolved), and a 2-point interpolation stencil (degenerate
    diffusion).  Out-of-grid mass is clamped into the edge cell.
    """
    P = coords.size
    w = np.zeros(P)
    sigma = np.sqrt(max(v, 0.0))

    if sigma >= GAUSSIAN_ROW_THRESHOLD * h:
        z = (coords - mu) / sigma
        w = np.exp(-0.5 * z * z)
        s = w.sum()
        if s <= 0.0:  # mean far outside the grid
            stats.boundary_clamps += 1
            w[0 if mu < coords[0] else -1] = 1.0
            return w
        return w / s

    # nearest cell to the target mean, clamped into the grid
    j = int(round((mu - coords[0]) / h))
    if j < 0 or j > P - 1:
        stats.boundary_clamps += 1
        j = min(max(j, 0), P - 1)
        mu = min(max(mu, coords[0]), coords[-1])
    delta = mu - coords[j]

    if v <= 1e-16 * h * h:
        # deterministic interpolation stencil: exact mean, no diffusion
        if delta >= 0:
            jl, frac = j, delta / h
        else:
            jl, frac = j - 1, 1.0 + delta / h
        jl = min(max(jl, 0), P - 1)
        jr = min(jl + 1, P - 1)
        w[jl] += 1.0 - frac
        w[jr] += frac
        return w

    second = v + delta * delta
    if second <= h * h and second >= abs(delta) * h:
        # 3-point stencil, exact first and second moments
        pm = (second - delta * h) / (2.0 * h * h)
        pp = (second + delta * h) / (2.0 * h * h)
        p0 = 1.0 - second / (h * h)
        for jj, pw in ((j - 1, pm), (j, p0), (j + 1, pp)):
            w[min(max(jj, 0), P - 1)] += pw
        return w

    # tiny diffusion with a sub-cell mean the 3-point stencil cannot represent:
    # fall back to interpolation (exact mean, variance overshoot <= h^2/4)
    stats.under_resolved_rows += 1
    return _axis_weights(coords, h, mu, 0.0, stats)


def transition_kernel_matrix(model: ClassicalModel, grid: ClassicalGrid, t: float, dt: float,
                             stats: KernelStats | None = None) -> np.ndarray:
    """Row-stochastic one-step kernel: row k approximates N(x_k + A dt, B Q B^T dt).

    Every row is nonnegative and sums to 1 to machine precision; interior rows
    carry the exact one-step mean and covariance (diagonal covariance case).
    """
    if stats is None:
        stats = KernelStats()
    pts = grid.points
    K = grid.n_points
    mus = pts + np.asarray(model.drift(pts, t), dtype=float) * dt
    sigs = model.diffusion(pts, t) * dt
    if sigs.ndim == 2:
        sigs = np.broadcast_to(sigs, (K, grid.ndim, grid.ndim))
    kern = np.zeros((K, K))
    axes = [grid.axis(dim) for dim in range(grid.ndim)]
    diag_only = np.max(np.abs(sigs - sigs * np.eye(grid.ndim))) <= 1e-14 * max(1.0, np.max(np.abs(sigs)))

    for k in range(K):
        Sig = sigs[k]
        if diag_only:
            per_axis = [
                _axis_weights(axes[dim], grid.spacings[dim], mus[k, dim], Sig[dim, dim], stats)
                for dim in range(grid.ndim)
            ]
            row = per_axis[0]
            for dim in range(1, grid.ndim):
                row = np.multiply.outer(row, per_axis[dim])
            kern[k] = row.reshape(-1)
        else:
            # full-covariance Gaussian rows (only trustworthy when resolved)
            if np.min(np.sqrt(np.diag(Sig)) / np.asarray(grid.spacings)) < GAUSSIAN_ROW_THRESHOLD:
                stats.under_resolved_rows += 1
            diff = pts - mus[k]
            qf = np.einsum("ki,ki->k", diff, np.linalg.solve(Sig, diff.T).T)
            row = np.exp(-0.5 * qf)
            s = row.sum()
            if s <= 0.0:
                stats.boundary_clamps += 1
                row[:] = 0.0
                row[np.argmin(np.linalg.norm(diff, axis=1))] = 1.0
                s = 1.0
            kern[k] = row / s
    return kern


class KernelCache:
    """Caches kernel matrices (and transposes) per (t, dt); shared read-only."""

    def __init__(self, model: ClassicalModel, grid: ClassicalGrid):
        self.model = model
        self.grid = grid
        self.stats = KernelStats()
        self._store = {}

    def _key(self, t: float, dt: float):
        return (None if self.model.time_invariant else round(float(t), 12), round(float(dt), 15))

    def kernel(self, t: float, dt: float) -> np.ndarray:
        key = self._key(t, dt)
        if key not in self._store:
            kern = transition_kernel_matrix(self.model, self.grid, t, dt, self.stats)
            self._store[key] = (kern, np.ascontiguousarray(kern.T))
        return self._store[key][0]

    def kernel_transpose(self, t: float, dt: float) -> np.ndarray:
        self.kernel(t, dt)
        return self._store[self._key(t, dt)][1]
