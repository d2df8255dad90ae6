import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from qimps import oracle as orc
from qimps.algorithms import pxp_family, tfim_family
from qimps.hamiltonian import pxp, tfim


def tfim_infinite_energy(lam):
    """Free-fermion ground energy per site of sum Z Z + lam X (either sign of J)."""
    val, _ = quad(lambda k: np.sqrt(1 + lam**2 - 2 * lam * np.cos(k)), 0, np.pi, epsabs=1e-13, epsrel=1e-13)
    return -val / np.pi


def tfim_ring_energy(lam, N):
    ks = np.pi * (2 * np.arange(N) + 1) / N
    return -np.sum(np.sqrt(1 + lam**2 - 2 * lam * np.cos(ks))) / N


def product(v):
    v = np.asarray(v, dtype=complex)
    return (v / np.linalg.norm(v)).reshape(2, 1, 1)


def test_product_state_energies():
    H = tfim(0.7, 1.0)
    h, n = orc.local_matrix(H)
    # |-> has <X> = -1 and <Z> = 0
    assert orc.energy_density(product([1, -1]), h, n) == pytest.approx(-0.7, abs=1e-12)
    # |0> has <ZZ> = 1 and <X> = 0
    assert orc.energy_density(product([1, 0]), h, n) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("lam", [0.5, 1.0])
@pytest.mark.parametrize("J", [-1.0, 1.0])
def test_ring_energy_matches_free_fermions(lam, J):
    assert orc.ed_ground_energy(tfim(lam, J), 8).ground_energy_density == pytest.approx(
        tfim_ring_energy(lam, 8), abs=1e-10)


def test_ring_guards():
    with pytest.raises(ValueError):
        orc.ring_hamiltonian(tfim(1.0), 16)
    with pytest.raises(ValueError):
        orc.ring_hamiltonian(pxp(), 9)


@pytest.mark.parametrize("lam", [0.5, 1.0])
def test_ground_state_is_variational_and_close(lam):
    _, e, _ = orc.oracle_ground_state(tfim(lam, -1.0), D=2, seed=0, starts=3)
    exact = tfim_infinite_energy(lam)
    assert e >= exact - 1e-10
    # D = 2 is exact to 1e-6 away from criticality, and within 1e-2 at it
    assert e - exact < (1e-6 if lam == 0.5 else 1e-2)


def test_ground_state_rejects_bond_dimension():
    with pytest.raises(ValueError):
        orc.oracle_ground_state(tfim(0.5), D=3)


def test_left_canonical_and_self_overlap():
    rng = np.random.default_rng(3)
    A = orc.left_canonical(rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2)))
    assert np.allclose(np.einsum("sab,sac->bc", A.conj(), A), np.eye(2), atol=1e-10)
    assert abs(orc.exact_mixed_eta(A, A)) == pytest.approx(1.0, abs=1e-12)
    assert orc.loschmidt_rate_dense(A, A) == pytest.approx(0.0, abs=1e-10)
    assert orc.state_distance(A, A) < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_velocity_is_left_gauge_fixed(seed):
    rng = np.random.default_rng(seed)
    H = tfim(rng.uniform(0, 2), -1.0)
    h, n = orc.local_matrix(H)
    A = orc.left_canonical(rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2)))
    _, l, _ = orc._fixed_points(A)
    B = orc.tdvp_velocity(A, h, n)
    assert np.abs(np.einsum("sba,bc,scd->ad", A.conj(), l, B)).max() < 1e-9


def test_tdvp_conserves_energy():
    H = tfim(0.5, -1.0)
    h, n = orc.local_matrix(H)
    fam = tfim_family(family="full_su4")
    A = fam.cell(np.random.default_rng(0).normal(size=fam.n_params))
    e0 = orc.energy_density(A, h, n)
    B = A
    for _ in range(5):
        B = orc.oracle_tdvp_step(B, H, 0.02)
    assert abs(orc.energy_density(B, h, n) - e0) < 1e-6


def test_restricted_step_equals_full_step_on_complete_family():
    # full SU(4) reaches every D = 2 tangent direction
    H = tfim(0.5, -1.0)
    fam = tfim_family(family="full_su4")
    x = np.random.default_rng(1).normal(size=fam.n_params)
    full = orc.oracle_tdvp_step(fam.cell(x), H, 0.01)
    y = orc.oracle_restricted_step(x, fam.cell, H, 0.01)
    assert orc.fidelity_density(full, fam.cell(y)) > 1 - 1e-10


def test_restricted_pxp_step_conserves_energy():
    H = pxp()
    h, n = orc.local_matrix(H)
    fam = pxp_family()
    x = np.array([0.9, 0.1, 5.41, -0.3])
    e0 = orc.energy_density(fam.cell(x), h, n)
    for _ in range(10):
        x = orc.oracle_restricted_step(x, fam.cell, H, 0.02, h, n)
    assert abs(orc.energy_density(fam.cell(x), h, n) - e0) < 1e-6
