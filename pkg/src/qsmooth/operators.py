"""Operator algebra on a truncated Hilbert space.

Fock-space operator builders, Lindblad generators and their adjoints, and the
Gaussian weak-measurement (Kraus) operator.  Everything is a plain complex
``numpy`` array; model containers are frozen dataclasses validated on
construction and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

HERMITICITY_TOL = 1e-12


class FockOperators(NamedTuple):
    a: np.ndarray
    a_dag: np.ndarray
    q: np.ndarray
    p: np.ndarray
    identity: np.ndarray


def require_hermitian(op: np.ndarray, name: str = "operator", tol: float = HERMITICITY_TOL) -> None:
    """Raise ``ValueError`` unless ``op`` is Hermitian to ``tol`` in max-norm."""
    dev = np.max(np.abs(op - op.conj().T))
    scale = max(1.0, float(np.max(np.abs(op))))
    if dev > tol * scale:
        raise ValueError(f"{name} is not Hermitian (max deviation {dev:.3e})")


def build_fock_operators(dim: int, omega: float, hbar: float = 1.0) -> FockOperators:
    """Lowering/raising and quadrature operators on the lowest ``dim`` number states.

    q = sqrt(hbar/(2 omega)) (a + a*),  p = i sqrt(hbar omega / 2) (a* - a).
    The canonical commutator [q, p] = i hbar holds exactly on the top-left
    (dim-1) x (dim-1) block; truncation corrupts only the last diagonal entry.
    """
    if dim < 2:
        raise ValueError(f"Hilbert dimension must be >= 2, got {dim}")
    if omega <= 0 or hbar <= 0:
        raise ValueError("omega and hbar must be positive")
    a = np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)
    a_dag = a.conj().T
    q = np.sqrt(hbar / (2.0 * omega)) * (a + a_dag)
    p = 1j * np.sqrt(hbar * omega / 2.0) * (a_dag - a)
    return FockOperators(a, a_dag, q, p, np.eye(dim, dtype=complex))


@dataclass(frozen=True)
class QuantumModel:
    """Quantum side of a hybrid scenario.

    ``hamiltonian_builder`` maps a classical point ``x`` (1-d array of length n)
    to a Hermitian ``dim x dim`` matrix.  ``dissipators`` are Lindblad jump
    operators (rates folded in).  ``initial_state`` is the a-priori density
    operator used by both the truth simulator and the filters.
    """

    dim: int
    hamiltonian_builder: Callable[[np.ndarray], np.ndarray]
    dissipators: tuple = ()
    hbar: float = 1.0
    initial_state: np.ndarray | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("Hilbert dimension must be >= 2")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        object.__setattr__(self, "dissipators", tuple(np.asarray(L, dtype=complex) for L in self.dissipators))
        for L in self.dissipators:
            if L.shape != (self.dim, self.dim):
                raise ValueError("dissipator shape does not match Hilbert dimension")
        if self.initial_state is None:
            ground = np.zeros((self.dim, self.dim), dtype=complex)
            ground[0, 0] = 1.0
            object.__setattr__(self, "initial_state", ground)
        else:
            rho0 = np.asarray(self.initial_state, dtype=complex)
            if rho0.shape != (self.dim, self.dim):
                raise ValueError("initial_state shape does not match Hilbert dimension")
            require_hermitian(rho0, "initial_state")
            object.__setattr__(self, "initial_state", rho0 / np.trace(rho0).real)

    def hamiltonian(self, x: np.ndarray) -> np.ndarray:
        H = np.asarray(self.hamiltonian_builder(np.asarray(x, dtype=float)), dtype=complex)
        if H.shape != (self.dim, self.dim):
            raise ValueError("hamiltonian_builder returned wrong shape")
        return H


@dataclass(frozen=True)
class MeasurementModel:
    """Measurement channels C_mu with noise covariance rate R (m x m, SPD).

    Precomputes R^-1 and the quadratic damping term sum_{mu,nu} C_mu* R^-1_{mu nu} C_nu
    used by the Kraus operator.
    """

    channels: tuple
    R: np.ndarray
    R_inv: np.ndarray = field(init=False, repr=False)
    quad_term: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        chans = tuple(np.asarray(C, dtype=complex) for C in self.channels)
        object.__setattr__(self, "channels", chans)
        R = np.asarray(self.R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("R must be a square matrix")
        if len(chans) != R.shape[0]:
            raise ValueError("channel count must match the dimension of R")
        if np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
            raise ValueError("R must be symmetric")
        eigs = np.linalg.eigvalsh(R)
        if np.min(eigs) <= 0:
            raise ValueError(f"R must be positive-definite (min eigenvalue {np.min(eigs):.3e})")
        d = chans[0].shape[0]
        for C in chans:
            if C.shape != (d, d):
                raise ValueError("all channels must share one Hilbert dimension")
        object.__setattr__(self, "R", R)
        R_inv = np.linalg.inv(R)
        object.__setattr__(self, "R_inv", R_inv)
        quad = np.zeros((d, d), dtype=complex)
        for mu in range(len(chans)):
            for nu in range(len(chans)):
                quad += R_inv[mu, nu] * (chans[mu].conj().T @ chans[nu])
        object.__setattr__(self, "quad_term", quad)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def dim(self) -> int:
        return self.channels[0].shape[0]

    def mean_rate(self, rho: np.ndarray) -> np.ndarray:
        """Expected observation rate per channel: tr[(C_mu + C_mu*) rho] / 2."""
        rho = np.asarray(rho)
        if rho.ndim == 2:
            return np.array([0.5 * np.trace((C + C.conj().T) @ rho).real for C in self.channels])
        # batched (B, d, d)
        return np.stack(
            [0.5 * np.einsum("bij,ji->b", rho, C + C.conj().T).real for C in self.channels], axis=-1
        )


def lindblad_apply(model: QuantumModel, x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """d rho / dt under the Lindblad generator at classical point ``x``.

    Returns -(i/hbar)[H(x), rho] + sum_k (L rho L* - {L* L, rho}/2).
    Output is Hermitian and traceless when ``rho`` is Hermitian.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.dim, model.dim):
        raise ValueError("rho dimension does not match the model")
    H = model.hamiltonian(x)
    out = (-1j / model.hbar) * (H @ rho - rho @ H)
    for L in model.dissipators:
        LdL = L.conj().T @ L
        out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def lindblad_adjoint_apply(model: QuantumModel, x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Adjoint generator action, defined by tr[e L(rho)] = tr[L*(e) rho].

    Returns +(i/hbar)[H(x), e] + sum_k (L* e L - {L* L, e}/2).
    """
    e = np.asarray(e, dtype=complex)
    if e.shape != (model.dim, model.dim):
        raise ValueError("e dimension does not match the model")
    H = model.hamiltonian(x)
    out = (1j / model.hbar) * (H @ e - e @ H)
    for L in model.dissipators:
        LdL = L.conj().T @ L
        out += L.conj().T @ e @ L - 0.5 * (LdL @ e + e @ LdL)
    return out


def measurement_kraus(meas: MeasurementModel, dy: np.ndarray, dt: float) -> np.ndarray:
    """Weak-measurement operator M(dy) = 1 + (1/2) dy^T R^-1 C - (dt/8) C*^T R^-1 C.

    The Gaussian reference-measure prefactor is not included here; the filters
    carry it in their per-step log-weight, where only ratios matter.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dy = np.atleast_1d(np.asarray(dy, dtype=float))
    if dy.shape != (meas.n_channels,):
        raise ValueError("dy length must match the channel count")
    if not np.all(np.isfinite(dy)):
        raise ValueError("dy must be finite")
    w = meas.R_inv @ dy
    d = meas.dim
    M = np.eye(d, dtype=complex) - (dt / 8.0) * meas.quad_term
    for nu, C in enumerate(meas.channels):
        M += 0.5 * w[nu] * C
    return M


# ---------------------------------------------------------------------------
# Batched kernels used by the grid filters.  Fields are (K, d, d) stacks.
# ---------------------------------------------------------------------------

def lindblad_batch(H_all: np.ndarray, dissipators: Sequence[np.ndarray], hbar: float,
                   rho: np.ndarray) -> np.ndarray:
    """Generator applied blockwise: H_all is (K, d, d), rho is (K, d, d)."""
    out = (-1j / hbar) * (H_all @ rho - rho @ H_all)
    for L in dissipators:
        LdL = L.conj().T @ L
        out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def lindblad_adjoint_batch(H_all: np.ndarray, dissipators: Sequence[np.ndarray], hbar: float,
                           e: np.ndarray) -> np.ndarray:
    out = (1j / hbar) * (H_all @ e - e @ H_all)
    for L in dissipators:
        LdL = L.conj().T @ L
        out += L.conj().T @ e @ L - 0.5 * (LdL @ e + e @ LdL)
    return out


def taylor4_lindblad_step(H_all, dissipators, hbar, rho, dt, adjoint=False):
    """One-step degree-4 Taylor integrator for the linear ODE d rho/dt = L rho.

    Equivalent to classical RK4 on this linear system.  Every term beyond the
    identity is traceless, so the step preserves each block trace exactly; the
    adjoint variant applies the same polynomial in L*, which makes the pair
    exactly dual up to roundoff.
    """
    apply = lindblad_adjoint_batch if adjoint else lindblad_batch
    acc = rho.copy()
    term = rho
    for j in range(1, 5):
        term = (dt / j) * apply(H_all, dissipators, hbar, term)
        acc += term
    return acc
