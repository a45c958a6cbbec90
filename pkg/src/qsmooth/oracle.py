"""Exact discrete-time reference: direct path-sum enumeration for tiny hybrid
instances, used as ground truth in tests and the convergence ladder.

The oracle works at the level of explicit superoperator matrices and explicit
transition matrices; its correctness rests only on linear algebra and full
enumeration over classical paths.  A matched qubit instance with exact
exponential propagators and the exactly normalized Gaussian measurement
operator serves as the reference the continuous pipeline converges to at first
order in the step size.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .classical import ClassicalGrid, ClassicalModel
from .errors import TooLargeError
from .operators import MeasurementModel, QuantumModel
from .scenario import Scenario
from .truth import TrajectoryRecord

MAX_STEPS = 6
MAX_GRID = 4
MAX_DIM = 3


# ---------------------------------------------------------------------------
# Superoperator helpers (row-major vec convention: vec(A X B) = (A kron B^T) vec X)
# ---------------------------------------------------------------------------

def conjugation_superop(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix of X -> A X B."""
    return np.kron(A, B.T)


def lindblad_superop_matrix(model: QuantumModel, x) -> np.ndarray:
    """Explicit d^2 x d^2 matrix of the Lindblad generator at classical point x."""
    d = model.dim
    H = model.hamiltonian(np.atleast_1d(x))
    eye = np.eye(d)
    mat = (-1j / model.hbar) * (conjugation_superop(H, eye) - conjugation_superop(eye, H))
    for L in model.dissipators:
        LdL = L.conj().T @ L
        mat += (conjugation_superop(L, L.conj().T)
                - 0.5 * conjugation_superop(LdL, eye)
                - 0.5 * conjugation_superop(eye, LdL))
    return mat


def superop_apply(mat: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    return (mat @ rho.reshape(-1)).reshape(d, d)


def superop_adjoint_apply(mat: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Adjoint action under the bilinear pairing tr[E O(rho)] = tr[O*(E) rho]."""
    d = e.shape[0]
    return (mat.T @ e.T.reshape(-1)).reshape(d, d).T


@dataclass(frozen=True)
class DiscreteScenario:
    """A tiny explicit hybrid model: everything is a concrete matrix."""

    transition: np.ndarray          # (K, K) row-stochastic
    prior: np.ndarray               # (K,)
    propagators: np.ndarray         # (K, d^2, d^2) quantum step superoperators
    kraus_builder: Callable         # dy -> (d, d) measurement operator
    rho0: np.ndarray                # (d, d) initial quantum state

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "prior", np.asarray(self.prior, dtype=float))
        object.__setattr__(self, "propagators", np.asarray(self.propagators, dtype=complex))
        object.__setattr__(self, "rho0", np.asarray(self.rho0, dtype=complex))
        rowsums = self.transition.sum(axis=1)
        if np.max(np.abs(rowsums - 1.0)) > 1e-10:
            raise ValueError("transition rows must sum to 1")
        if abs(self.prior.sum() - 1.0) > 1e-10:
            raise ValueError("prior must sum to 1")

    @property
    def n_grid(self) -> int:
        return self.transition.shape[0]

    @property
    def dim(self) -> int:
        return self.rho0.shape[0]


def _check_bounds(ds: DiscreteScenario, n_steps: int):
    if n_steps > MAX_STEPS:
        raise TooLargeError(f"{n_steps} steps exceeds the enumeration bound {MAX_STEPS}")
    if ds.n_grid > MAX_GRID:
        raise TooLargeError(f"{ds.n_grid} grid points exceeds the bound {MAX_GRID}")
    if ds.dim > MAX_DIM:
        raise TooLargeError(f"Hilbert dimension {ds.dim} exceeds the bound {MAX_DIM}")


def _kraus_list(ds: DiscreteScenario, dys) -> list:
    return [np.asarray(ds.kraus_builder(np.atleast_1d(dy)), dtype=complex) for dy in dys]


def enumerate_forward(ds: DiscreteScenario, dys) -> np.ndarray:
    """Unnormalized hybrid densities f_tau(x) by explicit path summation.

    Returns (L+1, K, d, d); entry tau sums the measured path-conditional state
    over all K^tau classical prefixes ending anywhere, weighted by the chain.
    """
    L = len(dys)
    _check_bounds(ds, L)
    K, d = ds.n_grid, ds.dim
    Ms = _kraus_list(ds, dys)
    out = np.zeros((L + 1, K, d, d), dtype=complex)
    for tau in range(L + 1):
        for path in itertools.product(range(K), repeat=tau + 1):
            weight = ds.prior[path[0]]
            for i in range(tau):
                weight *= ds.transition[path[i], path[i + 1]]
            if weight == 0.0:
                continue
            state = ds.rho0
            for i in range(tau):
                state = Ms[i] @ state @ Ms[i].conj().T
                state = superop_apply(ds.propagators[path[i]], state)
            out[tau, path[-1]] += weight * state
    return out


def iterate_forward(ds: DiscreteScenario, dys) -> np.ndarray:
    """Same densities by the one-step recursion (independent code path)."""
    L = len(dys)
    _check_bounds(ds, L)
    K, d = ds.n_grid, ds.dim
    Ms = _kraus_list(ds, dys)
    out = np.zeros((L + 1, K, d, d), dtype=complex)
    out[0] = ds.prior[:, None, None] * ds.rho0[None]
    for i in range(L):
        pushed = np.empty((K, d, d), dtype=complex)
        for k in range(K):
            state = Ms[i] @ out[i, k] @ Ms[i].conj().T
            pushed[k] = superop_apply(ds.propagators[k], state)
        for kk in range(K):
            out[i + 1, kk] = sum(ds.transition[k, kk] * pushed[k] for k in range(K))
    return out


def enumerate_effect(ds: DiscreteScenario, dys) -> np.ndarray:
    """Effect operators E_tau(x) by the reversed adjoint composition.

    E_L = identity; E_tau includes the measurement at tau, so the pairing
    sum_x tr[E_tau(x) f_tau(x)] is independent of tau.
    """
    L = len(dys)
    _check_bounds(ds, L)
    K, d = ds.n_grid, ds.dim
    Ms = _kraus_list(ds, dys)
    out = np.zeros((L + 1, K, d, d), dtype=complex)
    out[L] = np.tile(np.eye(d, dtype=complex)[None], (K, 1, 1))
    for i in range(L - 1, -1, -1):
        for k in range(K):
            mixed = sum(ds.transition[k, kk] * out[i + 1, kk] for kk in range(K))
            e = superop_adjoint_apply(ds.propagators[k], mixed)
            out[i, k] = Ms[i].conj().T @ e @ Ms[i]
    return out


def pairing(forward: np.ndarray, effect: np.ndarray) -> np.ndarray:
    """tr-pairing sum_x tr[E_tau(x) f_tau(x)] per tau."""
    return np.einsum("tkij,tkji->t", effect, forward).real


def oracle_smooth(ds: DiscreteScenario, dys) -> np.ndarray:
    """Exact smoothing densities h_tau(x), normalized per tau: (L+1, K)."""
    fwd = enumerate_forward(ds, dys)
    eff = enumerate_effect(ds, dys)
    vals = np.einsum("tkij,tkji->tk", eff, fwd).real
    totals = vals.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("oracle overlap vanished")
    return vals / totals


def path_posterior(ds: DiscreteScenario, dys) -> np.ndarray:
    """Smoothing densities via brute-force joint (path, likelihood) enumeration.

    Independent of the recursive machinery: each full path gets the scalar
    record likelihood of its composed quantum evolution.
    """
    L = len(dys)
    _check_bounds(ds, L)
    K = ds.n_grid
    Ms = _kraus_list(ds, dys)
    post = np.zeros((L + 1, K))
    for path in itertools.product(range(K), repeat=L + 1):
        weight = ds.prior[path[0]]
        for i in range(L):
            weight *= ds.transition[path[i], path[i + 1]]
        if weight == 0.0:
            continue
        state = ds.rho0
        for i in range(L):
            state = Ms[i] @ state @ Ms[i].conj().T
            state = superop_apply(ds.propagators[path[i]], state)
        joint = weight * np.trace(state).real
        for tau in range(L + 1):
            post[tau, path[tau]] += joint
    return post / post.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Matched instance: continuous pipeline scenario next to its exact twin.
# ---------------------------------------------------------------------------

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)


def exact_gaussian_kraus(meas: MeasurementModel, dy, dt: float) -> np.ndarray:
    """Exactly normalized Gaussian weak-measurement operator (Hermitian channels):
    expm(dy^T R^-1 C / 2 - (dt/4) C*^T R^-1 C).  Its Ito expansion reproduces
    the quadratic form the filters use; the difference per step is O(dt).
    """
    w = meas.R_inv @ np.atleast_1d(np.asarray(dy, dtype=float))
    gen = -(dt / 4.0) * meas.quad_term
    for nu, C in enumerate(meas.channels):
        gen = gen + 0.5 * w[nu] * C
    return expm(gen)


def matched_qubit_scenario(dt: float, T: float, gamma: float = 0.3,
                           noise_rate: float = 0.5) -> Scenario:
    """Qubit coupled to one of three constant force hypotheses, with damping
    and a level-population readout.  The constant classical model makes the
    pipeline's transition kernel exactly the identity, so the instance
    isolates the quantum and measurement discretization.
    """
    grid = ClassicalGrid.regular([(-0.9, 0.9, 3)])
    classical = ClassicalModel(
        n=1,
        drift=lambda x, t: np.zeros_like(x),
        noise_gain=lambda x, t: np.zeros(x.shape + (1,)),
        wiener_cov=[[0.0]],
        initial_mean=[0.45],
        initial_cov=[[0.18**2]],
    )
    rho0 = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)   # sigma_x eigenstate

    def hamiltonian(x):
        return 0.5 * SIGMA_Z + 0.5 * float(np.atleast_1d(x)[0]) * SIGMA_X

    quantum = QuantumModel(dim=2, hamiltonian_builder=hamiltonian,
                           dissipators=(math.sqrt(gamma) * SIGMA_MINUS,),
                           hbar=1.0, initial_state=rho0)
    channel = np.diag([1.0, 0.0]).astype(complex)   # excited-level population
    measurement = MeasurementModel(channels=(channel,), R=[[noise_rate]])
    return Scenario(quantum=quantum, classical=classical, measurement=measurement,
                    grid=grid, t0=0.0, T=T, dt=dt,
                    scenario_id="matched-qubit", snapshot_stride=1)


def matched_qubit_instance(dt: float, n_steps: int = 3, xi=(0.3, -1.1, 0.8),
                           gamma: float = 0.3, noise_rate: float = 0.5):
    """The discrimination problem in two forms: pipeline scenario and exact twin.

    The twin shares the grid, prior, and record but uses exact expm
    propagators and the exactly normalized Gaussian measurement operator.
    Recorded increments scale like sqrt(R dt) with fixed standardized draws.
    """
    if len(xi) < n_steps:
        raise ValueError("need one standardized draw per step")
    scenario = matched_qubit_scenario(dt, n_steps * dt, gamma, noise_rate)
    from ._gridops import gaussian_prior_density

    grid = scenario.grid
    prior = gaussian_prior_density(scenario) * grid.cell_volume
    prior = prior / prior.sum()
    props = np.stack([expm(dt * lindblad_superop_matrix(scenario.quantum, x))
                      for x in grid.points])
    discrete = DiscreteScenario(
        transition=np.eye(grid.n_points),
        prior=prior,
        propagators=props,
        kraus_builder=lambda dy: exact_gaussian_kraus(scenario.measurement, dy, dt),
        rho0=scenario.quantum.initial_state,
    )
    dys = (math.sqrt(noise_rate * dt) * np.asarray(xi[:n_steps], dtype=float)).reshape(-1, 1)
    record = TrajectoryRecord(t0=0.0, T=n_steps * dt, dt=dt,
                              x_true=np.zeros((n_steps, 1)), dy=dys,
                              seed=0, scenario_id="matched-qubit")
    return scenario, discrete, record


def consistency_instance(dt: float = 5e-3, n_steps: int = 3):
    """Deterministic d=2, K=2, L=3 instance with genuine classical mixing,
    used for the mutual-consistency checks of the enumeration machinery."""
    from .operators import measurement_kraus

    rho0 = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)

    def hamiltonian(x):
        return 0.5 * SIGMA_Z + 0.5 * float(np.atleast_1d(x)[0]) * SIGMA_X

    quantum = QuantumModel(dim=2, hamiltonian_builder=hamiltonian,
                           dissipators=(math.sqrt(0.25) * SIGMA_MINUS,),
                           hbar=1.0, initial_state=rho0)
    measurement = MeasurementModel(channels=(np.diag([1.0, 0.0]).astype(complex),),
                                   R=[[0.5]])
    points = [-0.7, 0.9]
    props = np.stack([expm(dt * lindblad_superop_matrix(quantum, x)) for x in points])
    ds = DiscreteScenario(
        transition=np.array([[0.8, 0.2], [0.3, 0.7]]),
        prior=np.array([0.6, 0.4]),
        propagators=props,
        kraus_builder=lambda dy: measurement_kraus(measurement, dy, dt),
        rho0=rho0,
    )
    xi = np.array([0.9, -0.4, 1.3, 0.2, -1.0, 0.6])[:n_steps]
    dys = (math.sqrt(0.5 * dt) * xi).reshape(-1, 1)
    return ds, dys


def _drive_integral(t: float) -> float:
    # integral of the smooth deterministic drive 0.4 sin(7t) + 0.1
    return -0.4 * math.cos(7.0 * t) / 7.0 + 0.1 * t


def smooth_drive_record(dt: float, T: float) -> TrajectoryRecord:
    """Deterministic record with exactly refinement-consistent increments."""
    L = int(round(T / dt))
    dy = np.array([[_drive_integral((i + 1) * dt) - _drive_integral(i * dt)]
                   for i in range(L)])
    return TrajectoryRecord(t0=0.0, T=T, dt=dt, x_true=np.zeros((L, 1)), dy=dy,
                            seed=0, scenario_id="matched-qubit")


def exact_twin_errors(dts, n_steps: int = 3):
    """L1 smoothing error of the pipeline against the exact same-step twin.

    With a fixed step count both runs share the composition; the remaining
    mismatches (measurement-operator truncation, degree-4 versus exact
    propagators) vanish superlinearly, so the error at least halves per dt
    halving -- the oracle-anchored exactness bound.
    """
    from .smoothing import smooth_series

    out = []
    for dt in dts:
        scenario, discrete, record = matched_qubit_instance(dt, n_steps=n_steps)
        h_oracle = oracle_smooth(discrete, record.dy)
        series = smooth_series(scenario, record, stride=1)
        h_pipe = np.stack([s.h * scenario.grid.cell_volume for s in series])
        out.append((dt, float(np.abs(h_pipe - h_oracle).sum())))
    return out


def self_convergence_ladder(dts, T: float = 0.12, refine: int = 8,
                            dy_scale_bug: float = 1.0):
    """First-order convergence of the pipeline over a fixed interval.

    The enumeration bound caps exact references at a handful of steps, so the
    fixed-interval limit is anchored by a pipeline run at the finest ladder
    step divided by ``refine``; errors are L1 distances of the smoothed
    density at the common output times.  ``dy_scale_bug`` deliberately
    corrupts the pipeline's increment bookkeeping (self-test mode of the
    checker; order collapses when it is not 1).
    """
    from .smoothing import smooth_series

    out_stride_time = T / 4.0

    def smoothed(dt, scale=1.0):
        scenario = matched_qubit_scenario(dt, T)
        record = smooth_drive_record(dt, T)
        if scale != 1.0:
            record = TrajectoryRecord(t0=0.0, T=T, dt=dt, x_true=record.x_true,
                                      dy=record.dy * scale, seed=0,
                                      scenario_id="matched-qubit")
        stride = int(round(out_stride_time / dt))
        series = smooth_series(scenario, record, stride=stride)
        return {round(s.t / out_stride_time): s.h * scenario.grid.cell_volume
                for s in series}

    ref = smoothed(min(dts) / refine)
    out = []
    for dt in dts:
        hs = smoothed(dt, scale=dy_scale_bug)
        err = sum(float(np.abs(hs[k] - ref[k]).sum()) for k in ref)
        out.append((dt, err))
    return out


def observed_order(ladder) -> float:
    """Least-squares slope of log2(error) against log2(dt) over a ladder."""
    dts = np.array([dt for dt, _ in ladder])
    errs = np.array([e for _, e in ladder])
    if np.any(errs <= 0):
        return float("nan")
    slope = np.polyfit(np.log2(dts), np.log2(errs), 1)[0]
    return float(slope)
