"""Variational environments.

Two problems are solved here:

* the right fixed point r = sum_s A^s r A^s+ of a state unitary, housed in an
  environment unitary V on the (bond, aux) wires, found by minimizing
  tr(rho^2) + tr(sigma^2) - 2 tr(rho sigma) between the bond density after
  V then U (rho) and after V alone (sigma);
* the dominant eigenpair (eta, r) of a mixed transfer map between two states
  with a Trotter gate inserted, found by minimizing
  ||E r||^2 + |eta|^2 ||r||^2 - 2 |eta| |r+ E r|.

State unitaries act on ``[p, bond...]``. A unit cell is passed as a list of
unitaries; ``Us[0]`` is the leftmost site.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mps
from .ansatz import AnsatzSpec, template
from .optimize import StructureViolation, doubled_rotosolve_step, fallback_minimize
from .qsim import (
    CNOT,
    H_GATE,
    MixedState,
    NoiseModel,
    ParamCircuit,
    PureState,
    apply_matrix,
    reduced_density,
    sample_bitstrings,
)


def _as_list(Us):
    if isinstance(Us, np.ndarray) and Us.ndim == 2:
        return [Us]
    return list(Us)


def n_bond(U) -> int:
    return int(round(np.log2(U.shape[0]))) - 1


# --------------------------------------------------------------------------- fixed-point objective


@dataclass(frozen=True)
class EnvObjectiveReport:
    value: float
    tr_r2: float
    tr_s2: float
    tr_rs: float
    evaluations: int


def env_circuits(Us, V: np.ndarray):
    """Circuits whose bond densities are rho (V then the cell) and sigma (V only).

    Wires: ``[p_1 .. p_c, bond (N), aux (N)]``.
    """
    Us = _as_list(Us)
    c, N = len(Us), n_bond(Us[0])
    bond = list(range(c, c + N))
    aux = list(range(c + N, c + 2 * N))
    sig = ParamCircuit(c + 2 * N).fixed(V, bond + aux)
    rho = ParamCircuit(c + 2 * N).fixed(V, bond + aux)
    for k in reversed(range(c)):
        rho.fixed(Us[k], [k] + bond)
    return rho, sig, bond


def _cswap_swap_test(n_reg: int, reg_a, reg_b) -> ParamCircuit:
    """Ancilla (wire 0) swap test between two equal-size registers."""
    circ = ParamCircuit(n_reg)
    circ.fixed(H_GATE, [0])
    cswap = np.eye(8, dtype=complex)
    cswap[[5, 6]] = cswap[[6, 5]]
    for a, b in zip(reg_a, reg_b):
        circ.fixed(cswap, [0, a, b])
    circ.fixed(H_GATE, [0])
    return circ


def _swap_test_overlap(c1: ParamCircuit, c2: ParamCircuit, reg, shots, seed, noise):
    """tr(rho1 rho2) over ``reg`` from P(ancilla = 0) = (1 + tr) / 2."""
    n = c1.n_qubits
    full = ParamCircuit(1 + 2 * n)
    full.extend(c1, [1 + q for q in range(n)])
    full.extend(c2, [1 + n + q for q in range(n)])
    test = _cswap_swap_test(1 + 2 * n, [1 + q for q in reg], [1 + n + q for q in reg])
    full.extend(test)
    state = full.run(noise=noise)
    if shots:
        counts = sample_bitstrings(state, shots, seed)
        p0 = sum(v for k, v in counts.items() if k[0] == "0") / shots
    else:
        rho = reduced_density(state, [0]).rho
        p0 = float(rho[0, 0].real)
    return 2 * p0 - 1


def env_objective(Us, V_params=None, ansatz: AnsatzSpec | None = None, V: np.ndarray | None = None,
                  shots: int = 0, seed: int | None = None, noise: NoiseModel | None = None) -> EnvObjectiveReport:
    """Squared Hilbert-Schmidt distance between the two bond densities.

    Exact mode (``shots = 0`` and no noise) takes traces of simulated reduced
    densities; otherwise each trace comes from a swap-test circuit.
    """
    if V is None:
        if ansatz is None:
            raise ValueError("need an ansatz or an explicit V")
        circ = template(ansatz)
        p = np.asarray(V_params, dtype=float).reshape(-1)
        if p.size != circ.n_params:
            raise ValueError(f"environment ansatz expects {circ.n_params} parameters, got {p.size}")
        V = circ.unitary(p)
    rho_c, sig_c, bond = env_circuits(Us, V)
    if shots == 0 and noise is None:
        rho = reduced_density(rho_c.run(), bond).rho
        sig = reduced_density(sig_c.run(), bond).rho
        t_rr = float(np.trace(rho @ rho).real)
        t_ss = float(np.trace(sig @ sig).real)
        t_rs = float(np.trace(rho @ sig).real)
        evals = 2
    else:
        rng = np.random.default_rng(seed)
        seeds = rng.integers(0, 2**31, size=3)
        t_rr = _swap_test_overlap(rho_c, rho_c, bond, shots, int(seeds[0]), noise)
        t_ss = _swap_test_overlap(sig_c, sig_c, bond, shots, int(seeds[1]), noise)
        t_rs = _swap_test_overlap(rho_c, sig_c, bond, shots, int(seeds[2]), noise)
        evals = 3
    return EnvObjectiveReport(t_rr + t_ss - 2 * t_rs, t_rr, t_ss, t_rs, evals)


def env_objective_dense(Us, V: np.ndarray) -> float:
    """Same objective from transfer maps, no circuits."""
    A = mps.cell_tensor([mps.extract_mps(U) for U in _as_list(Us)])
    s = mps.housed_env(V)
    r = mps.transfer_apply(A, A, s, "right")
    return float(np.linalg.norm(r - s) ** 2)


@dataclass
class EnvSolution:
    V: np.ndarray
    params: np.ndarray
    r: np.ndarray
    value: float
    converged: bool
    evaluations: int
    restarts: int = 0


def solve_environment(Us, ansatz: AnsatzSpec | None = None, tol: float = 1e-10, max_iters: int = 2000,
                      seed: int | None = 0, restarts: int = 6, rotosolve_sweeps: int = 3) -> EnvSolution:
    """Minimize the fixed-point objective over environment-ansatz parameters.

    Starts from zero parameters; rotation parameters that pass the
    two-frequency structure check get a few Rotosolve sweeps, then a
    quasi-Newton polish runs on all of them. Restarts jitter the start.
    """
    Us = _as_list(Us)
    N = n_bond(Us[0])
    if ansatz is None:
        ansatz = AnsatzSpec("env_general", 2 * N)
    circ = template(ansatz)
    rng = np.random.default_rng(seed)
    count = [0]

    def f(p):
        count[0] += 1
        return env_objective(Us, p, ansatz).value

    best = None
    x0 = np.zeros(circ.n_params)
    for attempt in range(restarts + 1):
        if attempt:
            x0 = rng.normal(scale=1.0, size=circ.n_params)
        val = f(x0)
        x = x0.copy()
        if val > tol:
            skip = set()
            for _ in range(rotosolve_sweeps):
                for k in range(circ.n_params):
                    if k in skip:
                        continue
                    try:
                        x, val, _, _ = doubled_rotosolve_step(f, k, x, val)
                    except StructureViolation:
                        skip.add(k)
            res = fallback_minimize(f, x, tol=1e-14, max_evals=max_iters * (2 * circ.n_params + 1))
            if res.value <= val:
                x, val = res.x, res.value
        if best is None or val < best[1]:
            best = (x, val, attempt)
        if best[1] < tol * 1e-4:
            break
    x, val, attempt = best
    V = circ.unitary(x)
    return EnvSolution(V, x, mps.housed_env(V), float(val), bool(val < tol), count[0], attempt)


def power_refine(Us, V0: np.ndarray, k: int, copies_per_circuit: int = 2) -> np.ndarray:
    """Apply the transfer map ``k`` times to the environment housed in ``V0``.

    Each circuit inserts up to ``copies_per_circuit`` cells between V and the
    bond readout; the resulting bond density is re-embedded and renormalized.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    Us = _as_list(Us)
    c, N = len(Us), n_bond(Us[0])
    V = V0
    done = 0
    while done < k:
        m = min(copies_per_circuit, k - done)
        n = m * c + 2 * N
        bond = list(range(m * c, m * c + N))
        aux = list(range(m * c + N, n))
        circ = ParamCircuit(n).fixed(V, bond + aux)
        for site in reversed(range(m * c)):
            circ.fixed(Us[site % c], [site] + bond)
        r = reduced_density(circ.run(), bond).rho
        r = 0.5 * (r + r.conj().T) / np.trace(r).real
        V = mps.embed_environment(r)
        done += m
    return V


# --------------------------------------------------------------------------- mixed transfer


def block_unitaries(Us, n_sites: int):
    Us = _as_list(Us)
    return [Us[i % len(Us)] for i in range(n_sites)]


def mixed_block_circuit(Us, Ups, W: np.ndarray | None, n_sites: int) -> tuple[ParamCircuit, dict]:
    """Circuit whose block <0_phys| C |0_phys> equals E / 2^(n/2).

    Wires: ``[k (N), k' (N), p_1..p_n, q_1..q_n]``. Ket unitaries act on
    (p_i, k), conjugated bra unitaries on (q_i, k'), W on the p wires, and
    each (p_i, q_i) pair is rotated out of the Bell basis.
    """
    Us_b = block_unitaries(Us, n_sites)
    Ups_b = block_unitaries(Ups, n_sites)
    N = n_bond(Us_b[0])
    k = list(range(N))
    kp = list(range(N, 2 * N))
    p = list(range(2 * N, 2 * N + n_sites))
    q = list(range(2 * N + n_sites, 2 * N + 2 * n_sites))
    circ = ParamCircuit(2 * N + 2 * n_sites)
    for i in reversed(range(n_sites)):
        circ.fixed(Us_b[i], [p[i]] + k)
        circ.fixed(Ups_b[i].conj(), [q[i]] + kp)
    if W is not None:
        circ.fixed(W, p)
    for i in range(n_sites):
        circ.fixed(CNOT, [p[i], q[i]])
        circ.fixed(H_GATE, [p[i]])
    return circ, {"k": k, "kp": kp, "phys": p + q, "bond": k + kp}


def mixed_transfer_dense(Us, Ups, W, n_sites: int) -> np.ndarray:
    A = mps.block_tensor_pattern([mps.extract_mps(U) for U in _as_list(Us)], n_sites)
    B = mps.block_tensor_pattern([mps.extract_mps(U) for U in _as_list(Ups)], n_sites)
    return mps.gated_transfer_matrix(A, B, W)


def prep_unitary(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    return mps.complete_columns((vec / np.linalg.norm(vec)).reshape(-1, 1))


@dataclass(frozen=True)
class OverlapTerms:
    Er2: float
    rr: float
    rEr: complex


def overlap_terms_circuit(Us, Ups, W, n_sites: int, r: np.ndarray, adjoint: bool = False) -> OverlapTerms:
    """||E r||^2 and r+ E r from postselected amplitudes (exact mode).

    With ``adjoint`` the inverse circuit is used, which realizes E+.
    """
    block, wires = mixed_block_circuit(Us, Ups, W, n_sites)
    if adjoint:
        block = block.inverse()
    n = block.n_qubits
    norm = float(np.linalg.norm(r))
    R = prep_unitary(r)
    circ = ParamCircuit(n).fixed(R, wires["bond"]).extend(block)
    psi = circ.run().amplitudes.reshape(2 ** len(wires["bond"]), -1)
    post = psi[:, 0]
    P = float(np.vdot(post, post).real)
    scale = 2.0**n_sites
    # undo the preparation and read the all-zero amplitude
    back = (R.conj().T @ post)[0]
    return OverlapTerms(scale * P * norm**2, norm**2, complex(np.sqrt(scale) * back * norm**2))


def overlap_terms_dense(E: np.ndarray, r: np.ndarray) -> OverlapTerms:
    Er = E @ r
    return OverlapTerms(float(np.vdot(Er, Er).real), float(np.vdot(r, r).real), complex(np.vdot(r, Er)))


def overlap_value(terms: OverlapTerms, eta_abs: float) -> float:
    return terms.Er2 + eta_abs**2 * terms.rr - 2 * eta_abs * abs(terms.rEr)


def overlap_objective(Us, Ups, W, n_sites: int, eta: float, r: np.ndarray, mode: str = "circuit") -> float:
    """v'(eta, r) = ||E r||^2 + |eta|^2 ||r||^2 - 2 |eta| |r+ E r|."""
    if mode == "circuit":
        terms = overlap_terms_circuit(Us, Ups, W, n_sites, r)
    else:
        terms = overlap_terms_dense(mixed_transfer_dense(Us, Ups, W, n_sites), r)
    return overlap_value(terms, abs(eta))


@dataclass
class MixedEnvSolution:
    eta: complex
    r: np.ndarray
    l: np.ndarray
    R: np.ndarray
    L: np.ndarray
    residual: float
    restarts: int
    converged: bool
    evaluations: int = 0
    history: list = field(default_factory=list)


def _unpack_r(x, m):
    v = x[:m] + 1j * x[m:]
    return v / np.linalg.norm(v)


def _shifted_residual(terms: OverlapTerms) -> float:
    return terms.Er2 + terms.rr - 2 * terms.rEr.real


def _solve_eigen_side(apply_terms, m, r0, dt, tol, rng, budget):
    """Joint minimization over (|eta|, r) with the restart rule."""
    thresh = 10 * dt if dt > 0 else 1e-2
    count = [0]

    def f(x):
        count[0] += 1
        return overlap_value(apply_terms(_unpack_r(x[1:], m)), x[0])

    base = np.concatenate([[1.0], r0.real, r0.imag])
    best = None
    history = []
    for attempt in range(budget + 1):
        x0 = base.copy()
        if attempt:
            x0[1:] += rng.normal(scale=0.1, size=2 * m)
        # warm start from ||E r - r||^2: a Rayleigh quotient, so no spurious
        # local minima, and its minimizer sits O(dt) from the dominant vector
        pre = fallback_minimize(lambda y: _shifted_residual(apply_terms(_unpack_r(y, m))), x0[1:],
                                tol=1e-8, max_evals=4000)
        x0[1:] = pre.x
        res = fallback_minimize(f, x0, tol=1e-13, max_evals=40000)
        x = res.x
        r = _unpack_r(x[1:], m)
        terms = apply_terms(r)
        eta = abs(terms.rEr) * np.exp(1j * np.angle(terms.rEr))
        val = overlap_value(terms, abs(eta))
        history.append((complex(eta), float(val)))
        ok = abs(abs(eta) - 1) <= thresh and val < max(tol, 1e-12)
        if best is None or (ok and not best[3]) or (ok == best[3] and val < best[2]):
            best = (eta, r, val, ok, attempt)
        if ok:
            break
    eta, r, val, ok, attempt = best
    return eta, r, val, ok, attempt, count[0], history


def solve_mixed_env(Us, Ups, W, n_sites: int, tol: float = 1e-10, seed: int | None = 0, dt: float = 0.0,
                    r0: np.ndarray | None = None, mode: str = "dense", restart_budget: int = 5,
                    solve_left: bool = True) -> MixedEnvSolution:
    """Dominant eigenpair of the gated mixed transfer map, variationally.

    ``mode="circuit"`` evaluates every term through the postselected
    circuits; ``mode="dense"`` uses the same formulas on the dense map.
    The left eigenvector comes from the same solver applied to E+.
    """
    rng = np.random.default_rng(seed)
    D = _as_list(Us)[0].shape[0] // 2
    m = D * D
    if r0 is None:
        A = mps.cell_tensor([mps.extract_mps(U) for U in _as_list(Us)])
        r0 = mps.exact_right_env(A).reshape(-1)
    r0 = np.asarray(r0, dtype=complex).reshape(-1)
    r0 = r0 / np.linalg.norm(r0)

    if mode == "circuit":
        right = lambda r: overlap_terms_circuit(Us, Ups, W, n_sites, r)
        left = lambda r: overlap_terms_circuit(Us, Ups, W, n_sites, r, adjoint=True)
    else:
        E = mixed_transfer_dense(Us, Ups, W, n_sites)
        right = lambda r: overlap_terms_dense(E, r)
        left = lambda r: overlap_terms_dense(E.conj().T, r)

    eta, r, val, ok, restarts, evals, hist = _solve_eigen_side(right, m, r0, dt, tol, rng, restart_budget)
    if solve_left:
        l0 = np.eye(D, dtype=complex).reshape(-1) / np.sqrt(D)
        _, l, lval, lok, lres, levals, _ = _solve_eigen_side(left, m, l0, dt, tol, rng, restart_budget)
        ok = ok and lok
        evals += levals
    else:
        l = np.eye(D, dtype=complex).reshape(-1) / np.sqrt(D)
    return MixedEnvSolution(complex(eta), r.reshape(D, D), l.reshape(D, D), prep_unitary(r), prep_unitary(l),
                            float(np.sqrt(max(val, 0.0))), restarts, bool(ok), evals, hist)
