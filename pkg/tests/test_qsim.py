import numpy as np
import pytest
from hypothesis import given, strategies as st

from qimps.qsim import (CNOT, H_GATE, I2, X, Y, Z, MixedState, NoiseModel, ParamCircuit, PauliString,
                        PureState, apply_depolarizing, apply_matrix, expectation, pauli_matrix,
                        probabilities, reduced_density, sample_bitstrings, sampled_expectation)

from conftest import random_unitary

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def test_bell_state_and_order():
    psi = PureState.zero(2)
    psi = apply_matrix(psi, H_GATE, [0])
    psi = apply_matrix(psi, CNOT, [0, 1])
    assert np.allclose(psi.amplitudes, [1, 0, 0, 1] / np.sqrt(2))
    # qubit 0 is the most significant bit
    one = apply_matrix(PureState.zero(3), X, [0])
    assert np.argmax(np.abs(one.amplitudes)) == 4


def test_expectation_zz_and_x():
    psi = apply_matrix(PureState.zero(2), X, [1])
    assert expectation(psi, PauliString("ZZ", (0, 1))) == pytest.approx(-1)
    assert expectation(psi, PauliString("X", (0,), 2.0)) == pytest.approx(0)


def test_pauli_string_validation():
    with pytest.raises(ValueError):
        PauliString("ZZ", (0,))
    with pytest.raises(ValueError):
        PauliString("ZQ", (0, 1))
    with pytest.raises(ValueError):
        PauliString("ZZ", (1, 1))


def test_register_caps():
    with pytest.raises(ValueError):
        PureState.zero(13)
    with pytest.raises(ValueError):
        MixedState.zero(9)


def test_rotation_convention():
    c = ParamCircuit(1).rot("X", (0,), "t")
    # exp(-i t/2 X) at t = pi is -i X
    assert np.allclose(c.unitary([np.pi]), -1j * X)


def test_full_depolarization_kills_traceless_observable():
    rng = np.random.default_rng(0)
    U = random_unitary(rng, 4)
    psi = apply_matrix(PureState.zero(2), U, [0, 1]).to_mixed()
    # complete depolarization is eta = 3/4 in the (1 - eta) rho + eta/3 sum P rho P form
    for q in (0, 1):
        psi = apply_depolarizing(psi, q, 0.75)
    assert np.allclose(psi.rho, np.eye(4) / 4, atol=1e-12)
    for s in ("ZI", "XZ", "YY"):
        assert abs(expectation(psi, PauliString(s, (0, 1)))) < 1e-12


@given(st.floats(0, 1), st.integers(0, 2))
def test_maximally_mixed_is_depolarizing_fixed_point(eta, q):
    rho = MixedState.maximally_mixed(3)
    assert np.allclose(apply_depolarizing(rho, q, eta).rho, rho.rho, atol=1e-14)


def test_depolarizing_at_one_flips_bloch_vector_by_minus_third():
    rho = apply_depolarizing(MixedState.zero(1), 0, 1.0)
    assert expectation(rho, PauliString("Z", (0,))) == pytest.approx(-1 / 3)


def test_noisy_run_stays_physical():
    c = ParamCircuit(3).fixed(H_GATE, [0]).fixed(CNOT, [0, 1]).fixed(CNOT, [1, 2])
    rho = c.run(noise=NoiseModel(0.1))
    assert isinstance(rho, MixedState)
    rho.check()


def test_reduced_density_of_bell_pair():
    psi = apply_matrix(apply_matrix(PureState.zero(2), H_GATE, [0]), CNOT, [0, 1])
    assert np.allclose(reduced_density(psi, [1]).rho, np.eye(2) / 2)


def test_sampling_is_seeded():
    psi = apply_matrix(PureState.zero(2), np.kron(H_GATE, H_GATE), [0, 1])
    a = sample_bitstrings(psi, 500, seed=3)
    b = sample_bitstrings(psi, 500, seed=3)
    assert a == b and sum(a.values()) == 500


def test_sampled_expectation_converges():
    rng = np.random.default_rng(2)
    psi = apply_matrix(PureState.zero(2), random_unitary(rng, 4), [0, 1])
    terms = [PauliString("ZZ", (0, 1), 0.7), PauliString("Y", (1,), -0.4), PauliString("X", (0,), 1.1)]
    exact = expectation(psi, terms)
    est = sampled_expectation(psi, terms, 200_000, seed=5)
    assert abs(est - exact) < 0.02


@given(st.lists(angles, min_size=15, max_size=15))
def test_parametrized_circuit_is_unitary(params):
    from qimps.ansatz import AnsatzSpec, template
    U = template(AnsatzSpec("full_su4", 2)).unitary(params)
    assert np.allclose(U @ U.conj().T, np.eye(4), atol=1e-10)


@given(st.lists(angles, min_size=3, max_size=3))
def test_inverse_and_conjugate_circuits(params):
    c = ParamCircuit(2).rot("XY", (0, 1), "a").rot("Z", (1,), "b").rot("YY", (0, 1), "c")
    U = c.unitary(params)
    assert np.allclose(c.inverse().unitary(params), U.conj().T, atol=1e-12)
    assert np.allclose(c.conjugate().unitary(params), U.conj(), atol=1e-12)


@given(st.lists(angles, min_size=4, max_size=4))
def test_pure_and_mixed_runs_agree(params):
    c = ParamCircuit(2).rot("X", (0,), "a").fixed(CNOT, (0, 1)).rot("YZ", (0, 1), "b")
    c.rot("Y", (1,), "c").rot("ZZ", (0, 1), "d")
    pure = c.run(params)
    mixed = c.run(params, MixedState.zero(2))
    assert np.allclose(np.outer(pure.amplitudes, pure.amplitudes.conj()), mixed.rho, atol=1e-12)


@given(st.lists(angles, min_size=15, max_size=15), st.integers(0, 14))
def test_parameter_shift_matches_finite_difference(params, k):
    from qimps.ansatz import AnsatzSpec, template
    from qimps.optimize import central_gradient, parameter_shift_gradient
    circ = template(AnsatzSpec("full_su4", 2))
    obs = [PauliString("ZX", (0, 1), 0.8), PauliString("Y", (0,), 0.3)]
    f = lambda p: expectation(circ.run(p), obs)
    fd = central_gradient(f, params, 1e-5)[k]
    assert abs(parameter_shift_gradient(f, params, k) - fd) < 1e-7


@given(st.lists(angles, min_size=15, max_size=15))
def test_unitary_derivatives_match_finite_difference(params):
    from qimps.ansatz import AnsatzSpec, template
    circ = template(AnsatzSpec("full_su4", 2))
    p = np.array(params)
    dU = circ.unitary_derivatives(p)
    k = 7
    e = np.zeros(15)
    e[k] = 1e-6
    fd = (circ.unitary(p + e) - circ.unitary(p - e)) / 2e-6
    assert np.allclose(dU[k], fd, atol=1e-8)


def test_probabilities_normalized():
    rho = MixedState.maximally_mixed(3)
    assert np.allclose(probabilities(rho), np.full(8, 1 / 8))


def test_pauli_matrix_products():
    assert np.allclose(pauli_matrix("XZ"), np.kron(X, Z))
    assert np.allclose(pauli_matrix("IY"), np.kron(I2, Y))


@given(st.lists(angles, min_size=15, max_size=15), st.sampled_from(["ZZ", "XI", "YZ", "IY", "XX"]))
def test_expectation_same_for_pure_and_density_states(params, letters):
    from qimps.ansatz import AnsatzSpec, template
    psi = template(AnsatzSpec("full_su4", 2)).run(params)
    obs = PauliString(letters, (0, 1), 0.9)
    assert abs(expectation(psi, obs) - expectation(psi.to_mixed(), obs)) < 1e-12
