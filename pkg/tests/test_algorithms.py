import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qimps import algorithms as al
from qimps import environment as envmod
from qimps import mps
from qimps import oracle as orc
from qimps.hamiltonian import pxp, tfim


@pytest.fixture(scope="module")
def su4():
    return al.tfim_family(family="full_su4")


@given(st.integers(0, 2**31 - 1), st.floats(0, 2), st.sampled_from([-1.0, 1.0]))
def test_exact_energy_matches_oracle(seed, lam, J):
    fam = al.tfim_family(family="full_su4")
    x = np.random.default_rng(seed).normal(size=fam.n_params)
    H = tfim(lam, J)
    h, n = orc.local_matrix(H)
    assert al.exact_energy(fam, x, H) == pytest.approx(orc.energy_density(fam.cell(x), h, n), abs=1e-10)


def test_pxp_energy_matches_oracle():
    fam = al.pxp_family()
    H = pxp()
    h, n = orc.local_matrix(H)
    for seed in range(5):
        x = np.random.default_rng(seed).uniform(-np.pi, np.pi, fam.n_params)
        assert al.exact_energy(fam, x, H) == pytest.approx(orc.energy_density(fam.cell(x), h, n) / 2, abs=1e-10)


@pytest.mark.parametrize("family", ["full_su4", "brick"])
def test_circuit_energy_with_exact_environment(family):
    fam = al.tfim_family(family=family, depth=2)
    H = tfim(0.8, -1.0)
    for seed in range(3):
        x = np.random.default_rng(seed).normal(size=fam.n_params)
        V = al.exact_env_unitary(fam, x)
        e_circ = al.energy_density(fam.unitaries(x), V, H, mode="circuit")
        e_dense = al.energy_density(fam.unitaries(x), V, H, mode="dense")
        assert e_circ == pytest.approx(al.exact_energy(fam, x, H), abs=1e-10)
        assert e_dense == pytest.approx(e_circ, abs=1e-10)


def test_energy_unit_cell_mismatch(su4):
    x = np.zeros(su4.n_params)
    with pytest.raises(ValueError):
        al.energy_density(su4.unitaries(x), np.eye(4), pxp())


def test_sampled_energy_converges(su4):
    x = np.random.default_rng(2).normal(size=su4.n_params)
    H = tfim(0.5, -1.0)
    V = al.exact_env_unitary(su4, x)
    exact = al.exact_energy(su4, x, H)
    a = al.energy_density(su4.unitaries(x), V, H, shots=20000, seed=5)
    b = al.energy_density(su4.unitaries(x), V, H, shots=20000, seed=5)
    assert a == b
    # three terms, each with variance <= 1 and 20000 shots
    assert abs(a - exact) < 5 * np.sqrt(3 / 20000)


def test_product_state_ground_state_exact_mode():
    fam = al.tfim_family(depth=1)
    res = al.ground_state(tfim(0.0, 1.0), fam, env_mode="exact", restarts=0, seed=7)
    assert res.energy == pytest.approx(-1.0, abs=1e-8)
    assert res.converged
    assert all(b <= a + 1e-12 for a, b in zip(res.trace[:-1], res.trace[1:])) or res.trace[-1] <= res.trace[0]


def test_ground_state_beats_start_and_reports():
    fam = al.tfim_family(family="full_su4")
    H = tfim(0.5, -1.0)
    res = al.ground_state(H, fam, env_mode="exact", restarts=0, seed=1, polish=False, max_outer=5)
    assert res.trace[-1] <= res.trace[0]
    assert res.outer_iterations <= 5
    assert mps.is_unitary(res.V)


def test_step_at_zero_dt_is_identity(su4):
    x = np.random.default_rng(0).normal(size=su4.n_params)
    xn, eta, info = al.tdvp_step(su4, x, tfim(0.5, -1.0), 0.0)
    assert np.array_equal(xn, x)
    assert abs(eta) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        al.tdvp_step(su4, x, tfim(0.5), -0.1)


def test_step_local_error_is_second_order(su4):
    # one step is first order accurate, so its local error scales as dt^2
    x = np.random.default_rng(0).normal(size=su4.n_params)
    H = tfim(0.5, -1.0)
    errs = []
    for dt in (0.02, 0.01):
        xe, _, info = al.tdvp_step(su4, x, H, dt)
        assert info.converged
        errs.append(orc.state_distance(orc.oracle_tdvp_step(su4.cell(x), H, dt), su4.cell(xe)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)


def test_block_overlap_gradient(su4):
    rng = np.random.default_rng(4)
    x = rng.normal(size=su4.n_params)
    xp = x + 0.05 * rng.normal(size=su4.n_params)
    W, n = tfim(0.5, -1.0).trotter_gate(0.01)
    _, g = al.block_overlap(su4, x, xp, W, n, grad=True)
    h = 1e-6
    fd = np.array([(abs(al.block_overlap(su4, x, xp + h * e, W, n)) - abs(al.block_overlap(su4, x, xp - h * e, W, n)))
                   / (2 * h) for e in np.eye(su4.n_params)])
    assert np.allclose(g, fd, atol=1e-7)


def test_variational_eta_matches_dense(su4):
    rng = np.random.default_rng(6)
    x = rng.normal(size=su4.n_params)
    H = tfim(0.5, -1.0)
    xn, _, _ = al.tdvp_step(su4, x, H, 0.01)
    W, n = H.trotter_gate(0.01)
    exact = al.block_overlap(su4, x, xn, W, n)
    sol = envmod.solve_mixed_env(su4.unitaries(x), su4.unitaries(xn), W, n, dt=0.01)
    assert abs(sol.eta - exact) < 1e-6
    assert sol.restarts <= 1


def test_evolve_shapes_and_serialisation(su4, tmp_path):
    x = np.random.default_rng(0).normal(size=su4.n_params)
    traj = al.evolve(su4, x, tfim(0.5, -1.0), 0.03, 0.01)
    assert traj.params.shape == (4, su4.n_params)
    assert np.allclose(traj.times, [0, 0.01, 0.02, 0.03])
    assert len(traj.diagnostics) == 3
    traj.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0].startswith("step,t,energy,eta_re,eta_im,p0")
    assert len(json.loads(traj.to_json())["energies"]) == 4
    with pytest.raises(ValueError):
        al.evolve(su4, x, tfim(0.5), 0.025, 0.01)


def test_loschmidt_rate(su4):
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=su4.n_params), rng.normal(size=su4.n_params)
    assert al.loschmidt_rate(su4, x, x) == pytest.approx(0.0, abs=1e-10)
    assert al.loschmidt_rate(su4, x, y) == pytest.approx(orc.loschmidt_rate_dense(su4.cell(x), su4.cell(y)), abs=1e-10)
    assert al.loschmidt_rate(su4, x, y) > 0


def test_find_cusps_on_folded_curve():
    t = np.linspace(0, 10, 1001)
    rate = np.abs(np.sin(np.pi * t / 2))
    cusps = [c for c, _ in al.find_cusps(t, rate)]
    # maxima of |sin| at t = 1, 3, 5, 7, 9
    assert np.allclose(cusps, [1, 3, 5, 7, 9], atol=0.011)
    assert al.find_cusps(t, np.zeros_like(t)) == []


def test_poincare_section_on_known_curve():
    t = np.arange(0, 20, 0.01)
    params = np.stack([np.sin(t), np.cos(t)], axis=1)
    cross = al.poincare_section(t, params, (0, 0.5))
    expected = [np.pi / 6 + 2 * np.pi * k for k in range(4)]
    assert np.allclose([c.time for c in cross], expected[:len(cross)], atol=1e-8)
    assert len(cross) == 4 - (expected[0] < 0.02)
    for c in cross:
        assert c.params[1] == pytest.approx(np.cos(c.time), abs=1e-7)
    with pytest.raises(ValueError):
        al.poincare_section(t[::10], params[::10], (0, 0.5))


def test_poincare_energy_filter():
    t = np.arange(0, 20, 0.01)
    # third coordinate carries the time so the fake energy can single out one crossing
    params = np.stack([np.sin(t), np.cos(t), t], axis=1)
    bad = np.pi / 6 + 2 * np.pi
    energy = lambda p: 0.2 if abs(p[2] - bad) < 0.1 else 0.01
    cross = al.poincare_section(t, params, (0, 0.5), energy_fn=energy, threshold=0.05)
    assert [c.kept for c in cross] == [abs(c.time - bad) > 0.1 for c in cross]
    assert sum(not c.kept for c in cross) == 1


def test_hausdorff_and_coordinates():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 0.0]])
    assert al.hausdorff(a, b) == pytest.approx(1.0)
    assert al.hausdorff(a, a) == 0.0
    assert al.hausdorff(a, np.zeros((0, 2))) == float("inf")
    c = al.section_coordinates([np.array([0.0, np.pi, 3 * np.pi / 2])], (1, 2))
    assert np.allclose(c, [[-0.5, -0.25]])


def test_energy_surface_phi():
    fam = al.pxp_family()
    H = pxp()
    x = np.array([0.9, 0.0, 5.41, 0.0])
    phi = al.energy_surface_phi(fam, x, 3, H)
    assert phi is not None
    y = x.copy()
    y[3] = phi
    assert abs(al.exact_energy(fam, y, H)) < 1e-10
    # far above any attainable energy there is no root
    assert al.energy_surface_phi(fam, x, 3, H, target=100.0) is None


@given(st.integers(0, 2**31 - 1))
def test_state_distance_properties(seed):
    fam = al.tfim_family(family="full_su4")
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=fam.n_params), rng.normal(size=fam.n_params)
    assert al.state_distance(fam, x, x) < 1e-6
    assert al.state_distance(fam, x, y) == pytest.approx(al.state_distance(fam, y, x), abs=1e-8)
    assert 0 <= al.state_distance(fam, x, y) <= np.sqrt(2) + 1e-12
