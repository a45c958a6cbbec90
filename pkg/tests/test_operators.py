import numpy as np
import pytest

from qsmooth.operators import (
    MeasurementModel,
    QuantumModel,
    build_fock_operators,
    lindblad_adjoint_apply,
    lindblad_apply,
    measurement_kraus,
    taylor4_lindblad_step,
)

from conftest import random_hermitian, random_psd


def oscillator_model(dim, omega=1.0, hbar=1.0, dissipators=()):
    ops = build_fock_operators(dim, omega, hbar)
    H0 = 0.5 * (ops.p @ ops.p + omega**2 * (ops.q @ ops.q))
    return QuantumModel(dim=dim,
                       hamiltonian_builder=lambda x: H0 - float(np.atleast_1d(x)[0]) * ops.q,
                       dissipators=dissipators, hbar=hbar)


class TestFockOperators:
    def test_lowering_operator_dim2(self):
        a = build_fock_operators(2, 1.0, 1.0).a
        expected = np.array([[0, 1], [0, 0]], dtype=complex)
        assert np.array_equal(a, expected)

    @pytest.mark.parametrize("dim", [2, 5, 12])
    def test_canonical_commutator_truncated(self, dim):
        hbar = 0.7
        ops = build_fock_operators(dim, omega=1.3, hbar=hbar)
        comm = ops.q @ ops.p - ops.p @ ops.q
        target = 1j * hbar * np.eye(dim)
        # truncation corrupts only the last diagonal entry
        assert np.max(np.abs((comm - target)[: dim - 1, : dim - 1])) < 1e-12
        assert abs(comm[dim - 1, dim - 1] - 1j * hbar * (1 - dim)) < 1e-10

    def test_ground_state_position_variance(self):
        # <0| q^2 |0> = hbar/(2 omega) = 0.5 at omega = hbar = 1
        ops = build_fock_operators(10, 1.0, 1.0)
        proj0 = np.zeros((10, 10), dtype=complex)
        proj0[0, 0] = 1.0
        val = np.trace(ops.q @ ops.q @ proj0).real
        assert abs(val - 0.5) < 1e-12

    def test_invalid_dim(self):
        with pytest.raises(ValueError):
            build_fock_operators(1, 1.0, 1.0)


class TestLindblad:
    def test_identity_state_hamiltonian_only(self, rng):
        model = QuantumModel(dim=4, hamiltonian_builder=lambda x: random_hermitian(
            np.random.default_rng(3), 4))
        out = lindblad_apply(model, [0.0], np.eye(4, dtype=complex) / 4)
        assert np.max(np.abs(out)) < 1e-14

    def test_ground_state_stationary(self):
        model = oscillator_model(8)
        rho = np.zeros((8, 8), dtype=complex)
        rho[0, 0] = 1.0
        out = lindblad_apply(model, [0.0], rho)
        assert np.max(np.abs(out)) < 1e-12

    def test_against_superoperator_matrix(self, rng):
        # independent oracle: build the d^2 x d^2 generator from kron identities
        d = 4
        H = random_hermitian(rng, d)
        L1 = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        model = QuantumModel(dim=d, hamiltonian_builder=lambda x: H, dissipators=(L1,))
        eye = np.eye(d)
        LdL = L1.conj().T @ L1
        # row-major vec: X -> A X B has matrix kron(A, B^T)
        mat = (-1j) * (np.kron(H, eye) - np.kron(eye, H.T))
        mat += np.kron(L1, L1.conj()) - 0.5 * np.kron(LdL, eye) - 0.5 * np.kron(eye, LdL.T)
        for _ in range(5):
            rho = random_hermitian(rng, d)
            direct = lindblad_apply(model, [0.0], rho)
            via_matrix = (mat @ rho.reshape(-1)).reshape(d, d)
            assert np.max(np.abs(direct - via_matrix)) < 1e-12

    def test_trace_and_hermiticity_preserved(self, rng):
        model = oscillator_model(6, dissipators=(0.3 * build_fock_operators(6, 1, 1).a,))
        for _ in range(10):
            rho = random_psd(rng, 6)
            out = lindblad_apply(model, [0.7], rho)
            assert abs(np.trace(out)) < 1e-12 * np.trace(rho).real
            assert np.max(np.abs(out - out.conj().T)) < 1e-12 * np.max(np.abs(out))

    def test_dimension_mismatch(self):
        model = oscillator_model(4)
        with pytest.raises(ValueError):
            lindblad_apply(model, [0.0], np.eye(3, dtype=complex))


class TestLindbladAdjoint:
    def test_identity_effect_hamiltonian_only(self, rng):
        model = QuantumModel(dim=3, hamiltonian_builder=lambda x: random_hermitian(
            np.random.default_rng(8), 3))
        out = lindblad_adjoint_apply(model, [0.0], np.eye(3, dtype=complex))
        assert np.max(np.abs(out)) < 1e-13

    def test_adjoint_identity(self, rng):
        d = 3
        model = QuantumModel(
            dim=d,
            hamiltonian_builder=lambda x: random_hermitian(np.random.default_rng(11), d),
            dissipators=(0.5 * (np.eye(d, k=1) + 0.3j * np.eye(d, k=-1)),),
        )
        for _ in range(20):
            e = random_hermitian(rng, d)
            rho = random_hermitian(rng, d)
            lhs = np.trace(e @ lindblad_apply(model, [0.2], rho))
            rhs = np.trace(lindblad_adjoint_apply(model, [0.2], e) @ rho)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_commutator_sign_flip_without_dissipators(self, rng):
        model = oscillator_model(5, hbar=0.5)
        e = random_hermitian(rng, 5)
        H = model.hamiltonian([0.3])
        expected = (1j / 0.5) * (H @ e - e @ H)
        out = lindblad_adjoint_apply(model, [0.3], e)
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_taylor4_pair_duality(self, rng):
        # the dynamics sub-step and its adjoint are the same polynomial pair
        d = 3
        H = random_hermitian(rng, d)
        diss = (0.4 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))),)
        for _ in range(10):
            f = random_psd(rng, d)[None]
            g = random_hermitian(rng, d)[None]
            lhs = np.trace(g[0] @ taylor4_lindblad_step(H[None], diss, 1.0, f, 0.05)[0])
            rhs = np.trace(taylor4_lindblad_step(H[None], diss, 1.0, g, 0.05, adjoint=True)[0] @ f[0])
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


class TestMeasurementKraus:
    def test_zero_coupling_gives_identity(self):
        meas = MeasurementModel(channels=(np.zeros((4, 4), dtype=complex),), R=[[0.7]])
        for dy in (-0.3, 0.0, 1.7):
            M = measurement_kraus(meas, [dy], 1e-3)
            assert np.array_equal(M, np.eye(4, dtype=complex))

    def test_hermitian_channel_gives_hermitian_kraus(self):
        q = build_fock_operators(5, 1, 1).q
        meas = MeasurementModel(channels=(q,), R=[[0.5]])
        M = measurement_kraus(meas, [0.37], 1e-2)
        assert np.max(np.abs(M - M.conj().T)) < 1e-14

    def test_povm_completeness_second_order(self):
        # int M(dy)* M(dy) N(dy; 0, R dt) d dy = 1 + O(dt^2); quadrature is
        # exact for the quadratic integrand (probabilists' Gauss-Hermite)
        q = build_fock_operators(6, 1, 1).q
        R = 0.5
        meas = MeasurementModel(channels=(q,), R=[[R]])
        nodes, weights = np.polynomial.hermite_e.hermegauss(8)
        weights = weights / weights.sum()

        def defect(dt):
            acc = np.zeros((6, 6), dtype=complex)
            for xi, w in zip(nodes, weights):
                M = measurement_kraus(meas, [np.sqrt(R * dt) * xi], dt)
                acc += w * (M.conj().T @ M)
            return np.max(np.abs(acc - np.eye(6)))

        dts = np.array([1e-2, 1e-3, 1e-4])
        errs = np.array([defect(dt) for dt in dts])
        assert errs[1] < 1e-5 and errs[2] < 1e-7
        slope = np.polyfit(np.log10(dts), np.log10(errs), 1)[0]
        assert abs(slope - 2.0) < 0.1

    def test_singular_R_rejected_at_construction(self):
        q = build_fock_operators(3, 1, 1).q
        with pytest.raises(ValueError):
            MeasurementModel(channels=(q, q), R=[[1.0, 1.0], [1.0, 1.0]])

    def test_channel_count_must_match_R(self):
        q = build_fock_operators(3, 1, 1).q
        with pytest.raises(ValueError):
            MeasurementModel(channels=(q,), R=np.eye(2))


def test_quantum_model_validates_initial_state():
    with pytest.raises(ValueError):
        QuantumModel(dim=3, hamiltonian_builder=lambda x: np.eye(3),
                     initial_state=np.eye(2))
