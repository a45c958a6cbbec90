"""Linear-Gaussian fast path: the phase-space reduction of the oscillator
scenario, forward/backward Kalman-Bucy filters, and their two-filter
combination.

For a harmonic oscillator with position readout and a linear classical force,
the joint (q, p, x) statistics close on Gaussians.  Continuous position
monitoring at noise rate R adds momentum process noise hbar^2/(4R), the
back-action diffusion.  The backward pass runs in information form so the
diffuse final condition is the finite pair Y(T) = 0, z(T) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalInstabilityError, UnsupportedScenarioError
from .scenario import Scenario, scenario_meta
from .truth import TrajectoryRecord

PSD_TOL = 1e-8


@dataclass(frozen=True)
class LinearGaussianModel:
    """dz = F z dt + noise(N dt);  dy = H z dt + noise(R dt); Gaussian prior."""

    F: np.ndarray
    N: np.ndarray
    H: np.ndarray
    R: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray

    def __post_init__(self):
        for name in ("F", "N", "H", "R", "prior_mean", "prior_cov"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        s = self.F.shape[0]
        if self.F.shape != (s, s) or self.N.shape != (s, s):
            raise ValueError("F and N must be square with equal size")
        if self.H.shape[1] != s:
            raise ValueError("H column count must match the state dimension")
        if np.min(np.linalg.eigvalsh(self.N)) < -1e-10 * max(1.0, np.max(np.abs(self.N))):
            raise ValueError("process noise N must be PSD")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ValueError("measurement noise R must be positive-definite")

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]


@dataclass
class KalmanRun:
    times: np.ndarray
    means: np.ndarray           # (L+1, s)
    covs: np.ndarray            # (L+1, s, s)
    log_likelihood: np.ndarray  # (L+1,)


@dataclass
class BackwardInfo:
    times: np.ndarray
    Y: np.ndarray               # (L+1, s, s) information matrices
    z: np.ndarray               # (L+1, s) information vectors


def derive_lg_model(scenario: Scenario) -> LinearGaussianModel:
    """Equivalent classical state-space model (q, p, x) of an oscillator scenario.

    Requires the preset structure: oscillator Hamiltonian (p^2 + w^2 q^2)/2 - x q,
    position readout, no dissipators, and linear classical drift with constant
    noise gain.  Raises UnsupportedScenarioError otherwise.
    """
    meta = scenario_meta(scenario)
    if meta is None:
        raise UnsupportedScenarioError("scenario was not built from oscillator presets")
    qm, cm, mm = meta["quantum"], meta["classical"], meta["measurement"]
    if qm.get("kind") != "oscillator" or mm.get("preset") != "position":
        raise UnsupportedScenarioError("needs an oscillator with position readout")
    if qm.get("n_dissipators", 0):
        raise UnsupportedScenarioError("dissipators are outside the phase-space reduction")
    omega, hbar = qm["omega"], qm["hbar"]
    R_scalar = mm["R"]
    A = np.atleast_2d(np.asarray(cm["A"], dtype=float))
    BQBt = np.atleast_2d(np.asarray(cm["BQBt"], dtype=float))
    n = A.shape[0]
    s = 2 + n

    F = np.zeros((s, s))
    F[0, 1] = 1.0
    F[1, 0] = -omega**2
    F[1, 2] = 1.0              # force x_1 drives momentum
    F[2:, 2:] = A

    N = np.zeros((s, s))
    N[1, 1] = hbar**2 / (4.0 * R_scalar)
    N[2:, 2:] = BQBt

    H = np.zeros((1, s))
    H[0, 0] = 1.0

    width = 2.0 * qm.get("thermal_nbar", 0.0) + 1.0
    prior_mean = np.concatenate(([0.0, 0.0], scenario.classical.initial_mean))
    prior_cov = np.zeros((s, s))
    prior_cov[0, 0] = width * hbar / (2.0 * omega)
    prior_cov[1, 1] = width * hbar * omega / 2.0
    prior_cov[2:, 2:] = scenario.classical.initial_cov
    return LinearGaussianModel(F=F, N=N, H=H, R=np.array([[R_scalar]]),
                               prior_mean=prior_mean, prior_cov=prior_cov)


def _check_psd(P, t):
    eigs = np.linalg.eigvalsh(P)
    if eigs[0] < -PSD_TOL * max(1.0, float(np.trace(P))):
        raise NumericalInstabilityError(
            f"covariance lost positive-definiteness at t={t:.6g} "
            f"(min eigenvalue {eigs[0]:.3e}); reduce dt")


def riccati_schedule(model: LinearGaussianModel, dt: float, n_steps: int,
                     psd_check_stride: int = 50):
    """Data-independent forward pass: covariances and gains for every step."""
    s = model.state_dim
    F, N, H, R = model.F, model.N, model.H, model.R
    R_inv = np.linalg.inv(R)
    covs = np.empty((n_steps + 1, s, s))
    gains = np.empty((n_steps, s, H.shape[0]))
    P = model.prior_cov.copy()
    covs[0] = P
    for i in range(n_steps):
        K = P @ H.T @ R_inv
        gains[i] = K
        P = P + dt * (F @ P + P @ F.T + N - K @ R @ K.T)
        P = 0.5 * (P + P.T)
        if (i + 1) % psd_check_stride == 0 or i == n_steps - 1:
            _check_psd(P, (i + 1) * dt)
        covs[i + 1] = P
    return covs, gains


def kalman_bucy_forward(model: LinearGaussianModel, record: TrajectoryRecord) -> KalmanRun:
    """Euler integration of the Kalman-Bucy filter along a record.

    dm = F m dt + P H^T R^-1 (dy - H m dt);  dP/dt = FP + PF^T + N - P H^T R^-1 H P.
    The log-likelihood column is the Girsanov weight relative to the pure-noise
    reference measure, the same convention the grid filter uses.
    """
    L = record.n_steps
    dt = record.dt
    covs, gains = riccati_schedule(model, dt, L)
    F, H, R_inv = model.F, model.H, np.linalg.inv(model.R)
    means = np.empty((L + 1, model.state_dim))
    loglik = np.zeros(L + 1)
    m = model.prior_mean.copy()
    means[0] = m
    for i in range(L):
        dy = record.dy[i]
        pred = H @ m
        loglik[i + 1] = loglik[i] + pred @ R_inv @ dy - 0.5 * dt * pred @ R_inv @ pred
        m = m + dt * (F @ m) + gains[i] @ (dy - pred * dt)
        means[i + 1] = m
    times = record.t0 + dt * np.arange(L + 1)
    return KalmanRun(times=times, means=means, covs=covs, log_likelihood=loglik)


def information_schedule(model: LinearGaussianModel, dt: float, n_steps: int):
    """Backward information matrices Y_i from Y(T) = 0 (data independent)."""
    s = model.state_dim
    F, N, H = model.F, model.N, model.H
    HRH = H.T @ np.linalg.inv(model.R) @ H
    Ys = np.empty((n_steps + 1, s, s))
    Y = np.zeros((s, s))
    Ys[n_steps] = Y
    for i in range(n_steps - 1, -1, -1):
        Y = Y + dt * (F.T @ Y + Y @ F - Y @ N @ Y + HRH)
        Y = 0.5 * (Y + Y.T)
        Ys[i] = Y
    return Ys


def kalman_bucy_backward(model: LinearGaussianModel, record: TrajectoryRecord) -> BackwardInfo:
    """Backward information filter over a record, from the diffuse final condition.

    -dY/dt = F^T Y + Y F - Y N Y + H^T R^-1 H;
    -dz    = (F^T - Y N) z dt + H^T R^-1 dy.
    Index i encodes the increments i, ..., L-1, matching the smoother split.
    """
    L = record.n_steps
    dt = record.dt
    Ys = information_schedule(model, dt, L)
    F, N, H = model.F, model.N, model.H
    HR_inv = H.T @ np.linalg.inv(model.R)
    zs = np.empty((L + 1, model.state_dim))
    z = np.zeros(model.state_dim)
    zs[L] = z
    for i in range(L - 1, -1, -1):
        z = z + dt * ((F.T - Ys[i + 1] @ N) @ z) + HR_inv @ record.dy[i]
        zs[i] = z
    times = record.t0 + dt * np.arange(L + 1)
    return BackwardInfo(times=times, Y=Ys, z=zs)


def mfp_combine(mean: np.ndarray, cov: np.ndarray, Y: np.ndarray, z: np.ndarray):
    """Fuse filtered moments with backward information:
    P_s = (P_f^-1 + Y)^-1,  m_s = P_s (P_f^-1 m_f + z).
    """
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise ValueError("filtered covariance is not finite")
    try:
        cov_inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("filtered covariance is singular") from exc
    info = cov_inv + np.asarray(Y, dtype=float)
    P_s = np.linalg.inv(info)
    P_s = 0.5 * (P_s + P_s.T)
    m_s = P_s @ (cov_inv @ np.asarray(mean, dtype=float) + np.asarray(z, dtype=float))
    return m_s, P_s


def mfp_series(fwd: KalmanRun, bwd: BackwardInfo):
    """Smoothed means/covariances at every index of a forward/backward pair."""
    L = fwd.means.shape[0] - 1
    means = np.empty_like(fwd.means)
    covs = np.empty_like(fwd.covs)
    for i in range(L + 1):
        means[i], covs[i] = mfp_combine(fwd.means[i], fwd.covs[i], bwd.Y[i], bwd.z[i])
    return means, covs


# ---------------------------------------------------------------------------
# Batched recursions for ensembles: the covariance/gain schedules are data
# independent, so only the mean/information-vector loops run per member.
# ---------------------------------------------------------------------------

def forward_means_batch(model: LinearGaussianModel, dys: np.ndarray, dt: float,
                        gains: np.ndarray | None = None) -> np.ndarray:
    """Filtered means for a stack of records; dys is (B, L, m) -> (B, L+1, s)."""
    B, L, _ = dys.shape
    if gains is None:
        _, gains = riccati_schedule(model, dt, L)
    F, H = model.F, model.H
    means = np.empty((B, L + 1, model.state_dim))
    m = np.tile(model.prior_mean, (B, 1))
    means[:, 0] = m
    for i in range(L):
        innov = dys[:, i] - dt * (m @ H.T)
        m = m + dt * (m @ F.T) + innov @ gains[i].T
        means[:, i + 1] = m
    return means


def backward_z_batch(model: LinearGaussianModel, dys: np.ndarray, dt: float,
                     Ys: np.ndarray | None = None) -> np.ndarray:
    """Backward information vectors for a stack of records: (B, L+1, s)."""
    B, L, _ = dys.shape
    if Ys is None:
        Ys = information_schedule(model, dt, L)
    F, N = model.F, model.N
    HR_inv_T = (model.H.T @ np.linalg.inv(model.R)).T
    zs = np.empty((B, L + 1, model.state_dim))
    z = np.zeros((B, model.state_dim))
    zs[:, L] = z
    for i in range(L - 1, -1, -1):
        z = z + dt * (z @ (F - N @ Ys[i + 1])) + dys[:, i] @ HR_inv_T
        zs[:, i] = z
    return zs


def mfp_means_batch(fwd_means: np.ndarray, covs: np.ndarray,
                    zs: np.ndarray, Ys: np.ndarray):
    """Smoothed means for a stack of runs plus the shared smoothed covariances."""
    B, Lp1, s = fwd_means.shape
    sm_means = np.empty_like(fwd_means)
    sm_covs = np.empty_like(covs)
    for i in range(Lp1):
        cov_inv = np.linalg.inv(covs[i])
        P_s = np.linalg.inv(cov_inv + Ys[i])
        P_s = 0.5 * (P_s + P_s.T)
        sm_covs[i] = P_s
        sm_means[:, i] = (fwd_means[:, i] @ cov_inv.T + zs[:, i]) @ P_s.T
    return sm_means, sm_covs
