import numpy as np
import pytest
from hypothesis import given, strategies as st

from qimps.hamiltonian import pxp, tfim
from qimps.oracle import ed_ground_energy, ed_extrapolate


def test_tfim_window_and_hermitian():
    H = tfim(0.7)
    assert H.window == 2 and H.unit_cell == 1
    h = H.local_matrix()
    assert np.allclose(h, h.conj().T)


def test_tfim_block_fraction_is_half():
    assert tfim(0.5).block_fraction(2) == pytest.approx(0.5)
    assert pxp().block_fraction(4) == pytest.approx(0.5)


def test_pxp_layout():
    H = pxp()
    assert H.unit_cell == 2 and H.window == 4
    h = H.local_matrix()
    assert np.allclose(h, h.conj().T)
    # all-zero state: (1 - Z) annihilates |0>, so no term survives
    assert abs(h[0, 0]) < 1e-14


def test_pxp_scale_is_linear():
    assert np.allclose(pxp(0.25).local_matrix() * 4, pxp(1.0).local_matrix())


@pytest.mark.parametrize("order", [1, 2])
@given(dt=st.floats(0.0, 0.2))
def test_trotter_gates_are_unitary(order, dt):
    W, n = tfim(0.3, -1).trotter_gate(dt, order)
    assert W.shape == (2**n, 2**n)
    assert np.allclose(W @ W.conj().T, np.eye(2**n), atol=1e-12)


def test_trotter_generator_rescaled():
    H = tfim(0.4)
    dt = 1e-6
    W, n = H.trotter_gate(dt, 1)
    gen = (W - np.eye(4)) / (-1j * dt)
    assert np.allclose(gen, 2 * H.local_matrix(), atol=1e-5)


def test_unsupported_order():
    with pytest.raises(ValueError):
        tfim(0.4).trotter_gate(0.1, 3)


def test_ed_field_only_energy():
    # H = sum lam X: product of |-> gives -lam per site
    assert ed_ground_energy(tfim(0.8, 0.0), 8).ground_energy_density == pytest.approx(-0.8)


def test_ed_critical_ising_extrapolates_to_four_over_pi():
    # known exact value of the critical chain: -4/pi per site
    est, _ = ed_extrapolate(tfim(1.0, -1.0), sizes=(8, 10, 12))
    assert est == pytest.approx(-4 / np.pi, abs=2e-3)
