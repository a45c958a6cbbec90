import numpy as np
import pytest

from qsmooth.classical import ClassicalGrid, ClassicalModel, linear_model
from qsmooth.operators import MeasurementModel, QuantumModel
from qsmooth.scenario import Scenario


def random_hermitian(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (A + A.conj().T)


def random_psd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A @ A.conj().T)


def generic_scenario(d=3, points=4, seed=5, n_channels=2, dissipate=True,
                     t0=0.0, T=0.1, dt=1e-3):
    """Small fully generic hybrid scenario: non-Hermitian channels, a
    dissipator, x-dependent Hamiltonian, OU classical signal."""
    rng = np.random.default_rng(seed)
    H0 = random_hermitian(rng, d)
    V = random_hermitian(rng, d)

    def builder(x, _H0=H0, _V=V):
        return _H0 + float(np.atleast_1d(x)[0]) * _V

    dissipators = ((0.4 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))),)
                   if dissipate else ())
    rho0 = random_psd(rng, d)
    rho0 = rho0 / np.trace(rho0).real
    quantum = QuantumModel(dim=d, hamiltonian_builder=builder,
                           dissipators=dissipators, hbar=1.0, initial_state=rho0)
    chans = tuple(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
                  for _ in range(n_channels))
    Rroot = rng.normal(size=(n_channels, n_channels))
    R = Rroot @ Rroot.T + 0.5 * np.eye(n_channels)
    measurement = MeasurementModel(channels=chans, R=R)
    classical = linear_model(1, [[-0.8]], [[0.6]], [[1.0]], [0.0], [[0.2]])
    grid = ClassicalGrid.regular([(-2.4, 2.4, points)])
    return Scenario(quantum=quantum, classical=classical, measurement=measurement,
                    grid=grid, t0=t0, T=T, dt=dt, scenario_id=f"generic-{seed}",
                    snapshot_stride=1)


def zero_channel_measurement(d):
    return MeasurementModel(channels=(np.zeros((d, d), dtype=complex),), R=[[0.4]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
