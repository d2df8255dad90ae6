"""Energy measurement, ground-state search and time evolution on circuits.

A state is a list of state unitaries (one per site of the unit cell) built
from an ansatz. Energies are read from the physical wires of a finite
circuit capped by the environment unitary V; time steps maximize the
per-block overlap between the evolved state and a new circuit state.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq, minimize

from . import environment as envmod
from . import mps
from .ansatz import AnsatzSpec, template
from .hamiltonian import LocalHamiltonian
from .optimize import StructureViolation, doubled_rotosolve_step, central_gradient, fallback_minimize, wrap
from .qsim import NoiseModel, ParamCircuit, expectation, sampled_expectation


# --------------------------------------------------------------------------- state family


@dataclass
class StateFamily:
    """Circuit states with one ansatz copy per site of the unit cell."""

    spec: AnsatzSpec
    unit_cell: int = 1

    def __post_init__(self):
        self._circ = template(self.spec)

    @property
    def n_site_params(self) -> int:
        return self._circ.n_params

    @property
    def n_params(self) -> int:
        return self.n_site_params * self.unit_cell

    @property
    def n_bond(self) -> int:
        return self.spec.n_qubits - 1

    @property
    def D(self) -> int:
        return 2**self.n_bond

    def split(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {x.size}")
        m = self.n_site_params
        return [x[k * m:(k + 1) * m] for k in range(self.unit_cell)]

    def unitaries(self, x):
        return [self._circ.unitary(p) for p in self.split(x)]

    def tensors(self, x):
        return [mps.extract_mps(U) for U in self.unitaries(x)]

    def cell(self, x):
        return mps.cell_tensor(self.tensors(x))

    def derivatives(self, x):
        """List of (site, dU) for every parameter in order."""
        out = []
        for site, p in enumerate(self.split(x)):
            for dU in self._circ.unitary_derivatives(p):
                out.append((site, dU))
        return out

    def circuit(self, x) -> list[ParamCircuit]:
        return [self._circ for _ in range(self.unit_cell)]


def tfim_family(depth: int = 1, n_bond: int = 1, family: str = "brick") -> StateFamily:
    if family == "full_su4":
        return StateFamily(AnsatzSpec("full_su4", 2))
    return StateFamily(AnsatzSpec(family, n_bond + 1, depth))


def pxp_family() -> StateFamily:
    return StateFamily(AnsatzSpec("pxp_site", 2), unit_cell=2)


# --------------------------------------------------------------------------- energy


def energy_circuit(Us, V: np.ndarray, n_sites: int) -> ParamCircuit:
    """Wires [p_1..p_n, bond, aux]: V, then the site unitaries right to left."""
    Us = list(Us)
    N = envmod.n_bond(Us[0])
    bond = list(range(n_sites, n_sites + N))
    aux = list(range(n_sites + N, n_sites + 2 * N))
    circ = ParamCircuit(n_sites + 2 * N).fixed(V, bond + aux)
    for i in reversed(range(n_sites)):
        circ.fixed(Us[i % len(Us)], [i] + bond)
    return circ


def energy_density(Us, V: np.ndarray, H: LocalHamiltonian, mode: str = "circuit",
                   noise: NoiseModel | None = None, shots: int = 0, seed: int | None = None) -> float:
    """Energy per site measured on the physical wires of the capped circuit.

    ``shots > 0`` replaces exact expectations by sampled Pauli parities.
    """
    Us = list(Us) if not (isinstance(Us, np.ndarray) and Us.ndim == 2) else [Us]
    if len(Us) != H.unit_cell:
        raise ValueError(f"Hamiltonian unit cell {H.unit_cell} but {len(Us)} state unitaries")
    w = H.window
    if mode == "circuit":
        state = energy_circuit(Us, V, w).run(noise=noise)
        if shots:
            return sampled_expectation(state, H.terms, shots, seed) / H.unit_cell
        return expectation(state, H.terms) / H.unit_cell
    r = mps.housed_env(V)
    C = mps.block_tensor_pattern([mps.extract_mps(U) for U in Us], w)
    rho = np.einsum("sij,jk,tik->st", C, r, C.conj())
    return float(np.trace(H.local_matrix() @ rho).real / H.unit_cell)


def _right_env(A):
    try:
        return mps.exact_right_env(A)
    except mps.DegenerateEnvironment:
        return mps.averaged_right_env(A)


def exact_env_unitary(family: StateFamily, x) -> np.ndarray:
    return mps.embed_environment(_right_env(family.cell(x)))


def exact_energy(family: StateFamily, x, H: LocalHamiltonian) -> float:
    """Energy with the exact environment (dense)."""
    A = family.cell(x)
    r = _right_env(A)
    n = H.window // H.unit_cell
    C = mps.block_tensor(A, n)
    rho = np.einsum("sij,jk,tik->st", C, r, C.conj())
    return float(np.trace(H.local_matrix() @ rho).real / H.unit_cell)


# --------------------------------------------------------------------------- ground state


@dataclass
class GroundStateResult:
    params: np.ndarray
    V_params: np.ndarray | None
    V: np.ndarray
    energy: float
    trace: list
    converged: bool
    env_residual: float
    outer_iterations: int
    restarts_used: int = 0


def _solve_V(family, x, env_spec, env_mode, v0, seed):
    Us = family.unitaries(x)
    if env_mode == "exact":
        V = exact_env_unitary(family, x)
        return V, None, envmod.env_objective_dense(Us, V)
    sol = _warm_env(Us, env_spec, v0, seed)
    return sol.V, sol.params, sol.value


def _warm_env(Us, env_spec, v0, seed):
    if v0 is not None:
        circ = template(env_spec)
        f = lambda p: envmod.env_objective(Us, p, env_spec).value
        res = fallback_minimize(f, v0, tol=1e-14)
        if res.value < 1e-13:
            V = circ.unitary(res.x)
            return envmod.EnvSolution(V, res.x, mps.housed_env(V), res.value, True, res.evaluations)
    return envmod.solve_environment(Us, env_spec, seed=seed)


def ground_state(H: LocalHamiltonian, family: StateFamily, env_spec: AnsatzSpec | None = None,
                 x0=None, tol_outer: float = 1e-9, max_outer: int = 200, env_mode: str = "variational",
                 inner_sweeps: int = 1, seed: int = 0, restarts: int = 3, jitter: float = 0.2,
                 noise: NoiseModel | None = None, polish: bool = True,
                 polish_evals: int = 20000) -> GroundStateResult:
    """Interleave Rotosolve sweeps on U (V fixed) with re-solving V.

    Every U parameter drives one gate per site, and the energy window holds
    several sites, so the doubled Rotosolve step is used; parameters that
    fail its structure check are left to the polish stage.

    Holding V fixed ignores how V moves with U, so the alternation settles
    slightly away from the optimum. With ``polish`` a quasi-Newton stage
    then minimizes the energy with V re-solved at every evaluation (warm
    started in variational mode). With ``restarts`` the search is repeated
    from jittered starts and the best result kept. Without ``x0`` the start
    is drawn from ``seed``.
    """
    if env_spec is None:
        env_spec = AnsatzSpec("env_general", 2 * family.n_bond)
    rng = np.random.default_rng(seed)
    # zero parameters give a product state, which is a saddle of the energy
    base = rng.normal(size=family.n_params) if x0 is None else np.asarray(x0, dtype=float)
    best = None
    for attempt in range(restarts + 1):
        start = base if attempt == 0 else base + rng.normal(scale=jitter, size=base.size)
        res = _ground_state_once(H, family, env_spec, start, tol_outer, max_outer, env_mode, inner_sweeps,
                                 seed + attempt, noise, polish, polish_evals)
        res.restarts_used = attempt
        if best is None or res.energy < best.energy:
            best = res
    return best


def _ground_state_once(H, family, env_spec, x, tol_outer, max_outer, env_mode, inner_sweeps, seed, noise,
                       polish, polish_evals):
    x = np.array(x, dtype=float)
    V, vp, vres = _solve_V(family, x, env_spec, env_mode, None, seed)
    mode = "circuit" if noise is not None else "dense"

    def measured(p, Vfix):
        return energy_density(family.unitaries(p), Vfix, H, mode=mode, noise=noise)

    E = measured(x, V)
    trace = [E]
    converged = False
    skip: set[int] = set()
    it = 0
    for it in range(1, max_outer + 1):
        f = lambda p: measured(p, V)
        val = E
        for _ in range(inner_sweeps):
            for k in range(family.n_params):
                if k in skip:
                    continue
                try:
                    x, val, _, _ = doubled_rotosolve_step(f, k, x, val)
                except StructureViolation:
                    skip.add(k)
        V, vp, vres = _solve_V(family, x, env_spec, env_mode, vp, seed)
        E_new = measured(x, V)
        trace.append(E_new)
        # with polish on, the alternation only needs to reach the basin
        if abs(E_new - E) < (max(tol_outer, 1e-6) if polish and noise is None else tol_outer):
            E = E_new
            converged = True
            break
        E = E_new
    if polish and noise is None:
        x, V, vp, vres, E, ok = _polish(H, family, env_spec, x, vp, env_mode, seed, polish_evals, trace)
        converged = ok
    return GroundStateResult(x, vp, V, float(E), trace, converged, float(vres), it)


def _polish(H, family, env_spec, x, vp, env_mode, seed, max_evals, trace):
    cache = {"vp": vp}

    def total(p):
        V, vpn, _ = _solve_V(family, p, env_spec, env_mode, cache["vp"], seed)
        if vpn is not None:
            cache["vp"] = vpn
        return energy_density(family.unitaries(p), V, H, mode="dense")

    # variational environments carry ~1e-9 noise, so difference more coarsely
    h = 1e-6 if env_mode == "exact" else 1e-4
    res = fallback_minimize(total, x, tol=1e-10, max_evals=max_evals, fd_step=h)
    x = res.x
    V, vp, vres = _solve_V(family, x, env_spec, env_mode, cache["vp"], seed)
    E = energy_density(family.unitaries(x), V, H, mode="dense")
    trace.append(E)
    ok = res.converged or float(np.linalg.norm(central_gradient(total, x, h))) < 1e-5
    return x, V, vp, vres, E, ok


# --------------------------------------------------------------------------- time evolution


def _block(family, x, n_sites):
    return mps.block_tensor_pattern(family.tensors(x), n_sites)


def _block_derivs(family, x, n_sites):
    """d(block tensor)/dx_j for each parameter."""
    tensors = family.tensors(x)
    D = family.D
    c = family.unit_cell
    out = []
    for site, dU in family.derivatives(x):
        dA = dU[:, :D].reshape(2, D, D)
        total = None
        for pos in range(n_sites):
            if pos % c != site:
                continue
            parts = [dA if i == pos else tensors[i % c] for i in range(n_sites)]
            term = mps.cell_tensor(parts)
            total = term if total is None else total + term
        out.append(total)
    return out


def dominant_eig(T: np.ndarray):
    """Largest-modulus eigenvalue with left/right eigenvectors."""
    vals, vl, vr = sla.eig(T, left=True, right=True)
    k = int(np.argmax(np.abs(vals)))
    return vals[k], vl[:, k], vr[:, k]


def block_overlap(family, x, xp, W, n_sites, grad: bool = False):
    """eta of the gated mixed transfer map and optionally d|eta|/dxp."""
    A = _block(family, x, n_sites)
    B = _block(family, xp, n_sites)
    T = mps.gated_transfer_matrix(A, B, W)
    eta, l, r = dominant_eig(T)
    if not grad:
        return eta
    norm = np.vdot(l, r)
    g = np.zeros(family.n_params)
    for j, dB in enumerate(_block_derivs(family, xp, n_sites)):
        dT = mps.gated_transfer_matrix(A, dB, W)
        deta = np.vdot(l, dT @ r) / norm
        g[j] = float((np.conj(eta) * deta).real / abs(eta))
    return eta, g


def _variational_overlap(family, x, xp, W, n_sites, state):
    """eta from solve_mixed_env with warm starts; gradient from its eigenvectors."""
    Us, Ups = family.unitaries(x), family.unitaries(xp)
    sol = envmod.solve_mixed_env(Us, Ups, W, n_sites, r0=state.get("r"), dt=state.get("dt", 0.0),
                                 seed=state.get("seed", 0))
    state["r"] = sol.r.reshape(-1)
    state["restarts"] = state.get("restarts", 0) + sol.restarts
    state["evals"] = state.get("evals", 0) + sol.evaluations
    A = _block(family, x, n_sites)
    r = sol.r.reshape(-1)
    l = sol.l.reshape(-1)
    norm = np.vdot(l, r)
    eta = sol.eta
    g = np.zeros(family.n_params)
    for j, dB in enumerate(_block_derivs(family, xp, n_sites)):
        dT = mps.gated_transfer_matrix(A, dB, W)
        deta = np.vdot(l, dT @ r) / norm
        g[j] = float((np.conj(eta) * deta).real / abs(eta))
    return eta, g, sol


@dataclass
class StepInfo:
    eta: complex
    deficit: float
    iterations: int
    converged: bool
    restarts: int = 0
    eta_exact: complex | None = None
    message: str = ""


def tdvp_step(family: StateFamily, x, H: LocalHamiltonian, dt: float, order: int = 1,
              env_mode: str = "exact", time_sign: float = -1.0, gtol: float = 1e-11, W=None,
              seed: int = 0):
    """One step: maximize |eta| over the new parameters, starting from ``x``.

    Returns ``(x_next, eta, StepInfo)``. ``env_mode="exact"`` takes the
    eigenvectors from a dense eigensolve, ``"variational"`` from
    :func:`solve_mixed_env` at every outer iterate.
    """
    x = np.asarray(x, dtype=float)
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if W is None:
        W, n_sites = H.trotter_gate(dt, order, time_sign)
    else:
        n_sites = int(round(np.log2(W.shape[0])))
    if dt == 0:
        eta = block_overlap(family, x, x, W, n_sites)
        return x.copy(), eta, StepInfo(eta, 1 - abs(eta), 0, True)
    state = {"dt": dt, "seed": seed}

    def fg(xp):
        if env_mode == "exact":
            eta, g = block_overlap(family, x, xp, W, n_sites, grad=True)
        else:
            eta, g, _ = _variational_overlap(family, x, xp, W, n_sites, state)
        return -abs(eta), -g

    res = minimize(fg, x.copy(), jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 500})
    xn = res.x
    eta = block_overlap(family, x, xn, W, n_sites)
    info = StepInfo(eta, float(1 - abs(eta)), int(res.nit), bool(res.success or np.linalg.norm(res.jac) < 1e-8),
                    state.get("restarts", 0), eta, str(res.message))
    if env_mode != "exact":
        _, _, sol = _variational_overlap(family, x, xn, W, n_sites, state)
        info.eta = sol.eta
        eta = sol.eta
    return xn, eta, info


@dataclass
class Trajectory:
    times: np.ndarray
    params: np.ndarray
    energies: np.ndarray
    etas: np.ndarray
    diagnostics: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            k = self.params.shape[1]
            w.writerow(["step", "t", "energy", "eta_re", "eta_im"] + [f"p{j}" for j in range(k)])
            for i in range(len(self.times)):
                w.writerow([i, repr(float(self.times[i])), repr(float(self.energies[i])),
                            repr(float(self.etas[i].real)), repr(float(self.etas[i].imag))]
                           + [repr(float(v)) for v in self.params[i]])

    def to_json(self) -> str:
        return json.dumps({
            "times": self.times.tolist(),
            "params": self.params.tolist(),
            "energies": self.energies.tolist(),
            "etas": [[e.real, e.imag] for e in self.etas],
            "diagnostics": self.diagnostics,
        })


def evolve(family: StateFamily, x0, H: LocalHamiltonian, T: float, dt: float, order: int = 1,
           env_mode: str = "exact", time_sign: float = -1.0, checkpoint_every: int = 0,
           checkpoint_path=None, callback=None) -> Trajectory:
    """Repeated TDVP steps; energies use the exact environment."""
    steps = int(round(T / dt)) if dt > 0 else 0
    if dt > 0 and abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a whole number of steps")
    W, n_sites = H.trotter_gate(dt, order, time_sign) if dt > 0 else (None, H.window)
    x = np.asarray(x0, dtype=float)
    params = [x.copy()]
    energies = [exact_energy(family, x, H)]
    etas = [1.0 + 0j]
    diags = []
    t0 = time.perf_counter()
    for step in range(steps):
        try:
            x, eta, info = tdvp_step(family, x, H, dt, order, env_mode, time_sign, W=W)
        except Exception as exc:  # keep what we have
            diags.append({"step": step + 1, "error": repr(exc)})
            break
        params.append(x.copy())
        energies.append(exact_energy(family, x, H))
        etas.append(complex(eta))
        diags.append({"step": step + 1, "deficit": info.deficit, "iterations": info.iterations,
                      "converged": info.converged, "restarts": info.restarts})
        if callback is not None:
            callback(step + 1, x)
        if checkpoint_every and checkpoint_path and (step + 1) % checkpoint_every == 0:
            with open(checkpoint_path, "w") as fh:
                json.dump({"step": step + 1, "params": x.tolist(), "elapsed": time.perf_counter() - t0}, fh)
    n = len(params)
    return Trajectory(dt * np.arange(n), np.array(params), np.array(energies), np.array(etas), diags)


# --------------------------------------------------------------------------- Loschmidt echo


def loschmidt_rate(family: StateFamily, x0, xt, method: str = "dense") -> float:
    """-log|eta|^2 per site, eta the largest-modulus eigenvalue of E^{U0}_{Ut}.

    Returns ``inf`` when the states are orthogonal per site.
    """
    A0, At = family.cell(x0), family.cell(xt)
    if method == "dense":
        vals = np.linalg.eigvals(mps.transfer_matrix(A0, At))
        eta = vals[np.argmax(np.abs(vals))]
    else:
        sol = envmod.solve_mixed_env(family.unitaries(x0), family.unitaries(xt), None, family.unit_cell,
                                     dt=np.inf, solve_left=False)
        eta = sol.eta
    if abs(eta) < 1e-300:
        return float("inf")
    return float(-2 * np.log(abs(eta)) / family.unit_cell)


def find_cusps(times, rates, min_prominence: float = 1e-3):
    """Local maxima of a sampled rate curve where the slope jumps sign sharply."""
    times, rates = np.asarray(times), np.asarray(rates)
    out = []
    for i in range(1, len(rates) - 1):
        if rates[i] > rates[i - 1] and rates[i] >= rates[i + 1]:
            lo = max(0, i - 20)
            hi = min(len(rates), i + 21)
            prom = rates[i] - max(rates[lo:i].min(), rates[i + 1:hi].min())
            if prom > min_prominence:
                out.append((float(times[i]), float(rates[i])))
    return out


# --------------------------------------------------------------------------- Poincare section


@dataclass
class Crossing:
    time: float
    params: np.ndarray
    energy: float | None
    kept: bool


def poincare_section(times, params, plane: tuple[int, float], energy_fn=None, reference: float = 0.0,
                     threshold: float = 0.05, dt_guard: float = 0.05, notices: list | None = None):
    """Upward crossings of ``params[:, k] = value`` located by cubic interpolation.

    Each crossing between samples i and i+1 uses the window i-1..i+2, fits a
    cubic to every parameter, bisects the chosen one to 1e-10 in time, and
    evaluates the rest there. With ``energy_fn`` points whose energy differs
    from ``reference`` by more than ``threshold`` are marked not kept.
    """
    times = np.asarray(times, dtype=float)
    params = np.asarray(params, dtype=float)
    k, value = plane
    if len(times) > 1 and np.max(np.diff(times)) > dt_guard:
        raise ValueError("trajectory too coarse for the section")
    y = params[:, k] - value
    out = []
    for i in range(len(times) - 1):
        if not (y[i] < 0 <= y[i + 1]):
            continue
        if i - 1 < 0 or i + 2 >= len(times):
            if notices is not None:
                notices.append(f"crossing near t={times[i]:.4f} skipped: window too short")
            continue
        idx = slice(i - 1, i + 3)
        tw = times[idx]
        tc = tw[1]
        polys = [np.polyfit(tw - tc, params[idx, j], 3) for j in range(params.shape[1])]
        pk = polys[k].copy()
        pk[-1] -= value
        a, b = times[i] - tc, times[i + 1] - tc
        fa = np.polyval(pk, a)
        if fa == 0:
            root = a
        else:
            lo, hi = a, b
            while hi - lo > 1e-10:
                mid = 0.5 * (lo + hi)
                if np.sign(np.polyval(pk, mid)) == np.sign(fa):
                    lo = mid
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
        if np.polyval(np.polyder(pk), root) <= 0:
            continue
        point = np.array([np.polyval(p, root) for p in polys])
        energy = None
        kept = True
        if energy_fn is not None:
            energy = float(energy_fn(point))
            kept = abs(energy - reference) <= threshold
        out.append(Crossing(float(root + tc), point, energy, kept))
    return out


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point clouds."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def section_coordinates(points, indices, period: float = 2 * np.pi) -> np.ndarray:
    """Selected parameters wrapped to [-pi, pi) and scaled to [-1/2, 1/2)."""
    pts = np.array([[p[i] for i in indices] for p in points], dtype=float).reshape(-1, len(indices))
    return wrap(pts) / period


def energy_surface_phi(family: StateFamily, x, index: int, H: LocalHamiltonian, target: float = 0.0,
                       grid: int = 721):
    """Value of ``x[index]`` that puts the state on the ``<H> = target`` surface.

    Scans [-pi, pi) for sign changes and returns the root closest to zero
    (ties: the smaller one), or ``None`` if there is none.
    """
    x = np.asarray(x, dtype=float)

    def e(v):
        y = x.copy()
        y[index] = v
        return exact_energy(family, y, H) - target

    vs = np.linspace(-np.pi, np.pi, grid)
    es = np.array([e(v) for v in vs])
    roots = []
    for i in range(grid - 1):
        if es[i] == 0:
            roots.append(vs[i])
        elif es[i] * es[i + 1] < 0:
            roots.append(brentq(e, vs[i], vs[i + 1], xtol=1e-14))
    if not roots:
        return None
    roots.sort(key=lambda v: (abs(v), v))
    return float(roots[0])


def state_distance(family: StateFamily, x, y) -> float:
    """sqrt(2 (1 - |eta|)) per unit cell, invariant under gauge and phase."""
    vals = np.linalg.eigvals(mps.transfer_matrix(family.cell(x), family.cell(y)))
    return float(np.sqrt(max(0.0, 2 * (1 - np.max(np.abs(vals))))))
