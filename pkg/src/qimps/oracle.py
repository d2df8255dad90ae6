"""Reference results from plain dense linear algebra.

Nothing here touches the circuit simulator: tensors are contracted directly
with einsum so these routines can serve as independent checks.

Tensors are ``A[s, i, j]`` with physical dimension ``d`` (a two-site unit cell
is passed as one tensor with ``d = 4``). The local Hamiltonian is given as a
dense matrix ``h`` on ``n`` consecutive tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import eigsh

from .qsim import PAULI

ED_MAX_SITES = 14


# --------------------------------------------------------------------------- basics


def _transfer(A, B=None):
    B = A if B is None else B
    D = A.shape[1]
    return np.einsum("sij,skl->ikjl", A, B.conj()).reshape(D * D, D * D)


def _fixed_points(A):
    """Dominant eigenvalue, left and right fixed points with tr(l r) = 1."""
    D = A.shape[1]
    T = _transfer(A)
    vals, vecs = np.linalg.eig(T)
    k = np.argmax(vals.real)
    lam = vals[k].real
    r = vecs[:, k].reshape(D, D)
    r = r / np.trace(r)
    r = 0.5 * (r + r.conj().T)
    lvals, lvecs = np.linalg.eig(T.conj().T)
    kl = np.argmin(np.abs(lvals - lam))
    l = lvecs[:, kl].reshape(D, D)
    l = l / np.trace(l)
    l = 0.5 * (l + l.conj().T)
    l = l / np.trace(l @ r).real
    return lam, l, r


def _psd_sqrt(M, inverse=False):
    w, Q = np.linalg.eigh(0.5 * (M + M.conj().T))
    w = np.clip(w, 1e-300, None)
    p = -0.5 if inverse else 0.5
    return (Q * w**p) @ Q.conj().T


def _chain(A, n):
    out = A
    for _ in range(n - 1):
        out = np.einsum("aij,bjk->abik", out, A).reshape(-1, A.shape[1], A.shape[2])
    return out


def energy_density(A, h, n):
    """<h> on n consecutive tensors of the uniform state, normalized."""
    lam, l, r = _fixed_points(A)
    C = _chain(A, n)
    val = np.einsum("ai,tab,ts,sij,jb->", l, C.conj(), h, C, r)
    return float(val.real / lam**n)


def left_canonical(A):
    """Gauge-transform to sum_s A^s+ A^s = I; returns the new tensor."""
    lam, l, _ = _fixed_points(A)
    A = A / np.sqrt(lam)
    l = l / np.trace(l).real * A.shape[1]
    L = _psd_sqrt(l)
    Li = _psd_sqrt(l, inverse=True)
    return np.einsum("ab,sbc,cd->sad", L, A, Li)


def right_env(A):
    """Right fixed point of a left-canonical tensor, trace one."""
    D = A.shape[1]
    vals, vecs = np.linalg.eig(_transfer(A))
    k = np.argmin(np.abs(vals - 1))
    r = vecs[:, k].reshape(D, D)
    r = r / np.trace(r)
    return 0.5 * (r + r.conj().T)


def fidelity_density(A, B):
    """|eta| for the transfer matrix between two tensors (largest modulus)."""
    return float(np.max(np.abs(np.linalg.eigvals(_transfer(A, B)))))


def state_distance(A, B):
    """Gauge-invariant per-tensor distance sqrt(2 (1 - |eta|))."""
    return float(np.sqrt(max(0.0, 2 * (1 - fidelity_density(A, B)))))


# --------------------------------------------------------------------------- Hamiltonians


def dense_local(terms, n_sites):
    """Dense operator from (letters, sites, coefficient) triples."""
    out = np.zeros((2**n_sites, 2**n_sites), dtype=complex)
    for letters, sites, c in terms:
        ops = [np.eye(2)] * n_sites
        for ch, s in zip(letters, sites):
            ops[s] = PAULI[ch]
        m = np.ones((1, 1))
        for o in ops:
            m = np.kron(m, o)
        out += c * m
    return out


def _term_list(H):
    return [(t.letters, t.sites, t.coefficient) for t in H.terms]


def local_matrix(H):
    """(h on the window, number of unit cells in the window)."""
    return dense_local(_term_list(H), H.window), H.window // H.unit_cell


# --------------------------------------------------------------------------- ground state


def _random_canonical(rng, d, D):
    A = rng.normal(size=(d, D, D)) + 1j * rng.normal(size=(d, D, D))
    return left_canonical(A)


def oracle_ground_state(H, D=2, seed=0, starts=10, tol=1e-12):
    """Minimize the energy density directly over tensors; best of ``starts``.

    Returns ``(A, energy_per_site, all_energies)``.
    """
    if D not in (2, 4):
        raise ValueError("oracle supports D in {2, 4}")
    h, n = local_matrix(H)
    d = 2**H.unit_cell
    rng = np.random.default_rng(seed)
    shape = (d, D, D)
    size = int(np.prod(shape))

    def unpack(x):
        return (x[:size] + 1j * x[size:]).reshape(shape)

    def f(x):
        return energy_density(unpack(x), h, n)

    best, results = None, []
    for _ in range(starts):
        A0 = _random_canonical(rng, d, D)
        x0 = np.concatenate([A0.real.ravel(), A0.imag.ravel()])
        res = minimize(f, x0, method="BFGS", options={"gtol": tol, "maxiter": 5000})
        # second pass from the canonicalized optimum removes scale drift
        A1 = left_canonical(unpack(res.x))
        x1 = np.concatenate([A1.real.ravel(), A1.imag.ravel()])
        res = minimize(f, x1, method="BFGS", options={"gtol": tol, "maxiter": 5000})
        e = res.fun / H.unit_cell
        results.append(e)
        if best is None or e < best[1]:
            best = (left_canonical(unpack(res.x)), e)
    return best[0], best[1], results


# --------------------------------------------------------------------------- TDVP


def energy_gradient(A, h, n, step=1e-3):
    """Wirtinger gradient d e / d conj(A) by 5-point central differences."""
    g = np.zeros(A.shape, dtype=complex)
    coeffs = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))
    for idx in np.ndindex(A.shape):
        parts = []
        for unit in (1.0, 1j):
            acc = 0.0
            for k, c in coeffs:
                B = A.copy()
                B[idx] += k * step * unit
                acc += c * energy_density(B, h, n)
            parts.append(acc / step)
        g[idx] = 0.5 * (parts[0] + 1j * parts[1])
    return g


def _null_left(A, l):
    """Orthonormal basis V_L of the complement of stack(l^1/2 A^s)."""
    d, D, _ = A.shape
    L = np.einsum("ab,sbc->sac", _psd_sqrt(l), A).reshape(d * D, D)
    u, _, _ = np.linalg.svd(L, full_matrices=True)
    return u[:, D:]


def tdvp_velocity(A, h, n):
    """Gauge-fixed tangent vector of -i (H - E)|psi> for the uniform state."""
    d, D, _ = A.shape
    lam, l, r = _fixed_points(A)
    A = A / np.sqrt(lam)
    g = energy_gradient(A, h, n)
    VL = _null_left(A, l)
    li = _psd_sqrt(l, inverse=True)
    ri = _psd_sqrt(r, inverse=True)
    G = np.einsum("ab,sbc,cd->sad", li, g, ri).reshape(d * D, D)
    X = -1j * VL.conj().T @ G
    B = (VL @ X @ ri).reshape(d, D, D)
    return np.einsum("ab,sbc->sac", li, B)


def oracle_tdvp_step(A, H, dt, h=None, n=None):
    """One RK4 step of the tangent-space flow; result is left-canonical."""
    if h is None:
        h, n = local_matrix(H)

    def f(X):
        return tdvp_velocity(X, h, n)

    k1 = f(A)
    k2 = f(A + 0.5 * dt * k1)
    k3 = f(A + 0.5 * dt * k2)
    k4 = f(A + dt * k3)
    return left_canonical(A + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))


def _left_gauge_fix(A, l, r, B):
    """Add the pure-gauge term Z A - A Z so that sum_s A^s+ l B^s = 0.

    The component of B along A itself (norm and phase) is dropped too. Only
    then does V_L^+ l^1/2 B r^1/2 give the tangent vector of B faithfully.
    """
    D = A.shape[1]
    Y = np.einsum("sba,bc,scd->ad", A.conj(), l, B)
    c = np.trace(Y @ r)
    # (1 - E_L)(W) = Y - c l with E_L(W) = sum_s A^s+ W A^s, W = l Z
    EL = np.einsum("sba,scd->adbc", A.conj(), A).reshape(D * D, D * D)
    W = np.linalg.lstsq(np.eye(D * D) - EL, (Y - c * l).reshape(-1), rcond=1e-12)[0].reshape(D, D)
    Z = np.linalg.solve(l, W)
    return B - c * A - np.einsum("sab,bc->sac", A, Z) + np.einsum("ab,sbc->sac", Z, A)


def restricted_velocity(x, tensor_fn, h, n, fd=1e-5):
    """Parameter velocity from the McLachlan principle on a restricted family.

    ``tensor_fn(x)`` maps real parameters to a (cell) tensor.
    """
    A = tensor_fn(x)
    lam, l, r = _fixed_points(A)
    A = A / np.sqrt(lam)
    d, D, _ = A.shape
    k = len(x)
    Bs = []
    for i in range(k):
        e = np.zeros(k)
        e[i] = fd
        Bs.append((tensor_fn(x + e) - tensor_fn(x - e)) / (2 * fd) / np.sqrt(lam))
    VL = _null_left(A, l)
    ls, rs = _psd_sqrt(l), _psd_sqrt(r)
    Xs = [VL.conj().T @ np.einsum("ab,sbc,cd->sad", ls, _left_gauge_fix(A, l, r, B), rs).reshape(d * D, D)
          for B in Bs]
    M = np.array([[np.vdot(Xi, Xj) for Xj in Xs] for Xi in Xs])
    # Im <Phi(B_i)|(H - E)psi> from the energy change along i B_i
    e0 = 1e-4
    V = np.zeros(k)
    for i, B in enumerate(Bs):
        ep = energy_density(A + 1j * e0 * B, h, n)
        em = energy_density(A - 1j * e0 * B, h, n)
        ep2 = energy_density(A + 2j * e0 * B, h, n)
        em2 = energy_density(A - 2j * e0 * B, h, n)
        V[i] = 0.5 * (8 * (ep - em) - (ep2 - em2)) / (12 * e0)
    return np.linalg.lstsq(M.real, V, rcond=1e-10)[0]


def oracle_restricted_step(x, tensor_fn, H, dt, h=None, n=None):
    if h is None:
        h, n = local_matrix(H)

    def f(y):
        return restricted_velocity(y, tensor_fn, h, n)

    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


# --------------------------------------------------------------------------- exact diagonalization


@dataclass(frozen=True)
class RingSpectrum:
    N: int
    ground_energy_density: float
    gap: float


def _sparse_string(letters, sites, N):
    mats = {ch: sp.csr_matrix(PAULI[ch]) for ch in "IXYZ"}
    ops = [sp.identity(2, format="csr", dtype=complex)] * N
    for ch, s in zip(letters, sites):
        ops[s % N] = mats[ch]
    out = ops[0]
    for o in ops[1:]:
        out = sp.kron(out, o, format="csr")
    return out


def ring_hamiltonian(H, N):
    if N > ED_MAX_SITES:
        raise ValueError(f"ring size capped at {ED_MAX_SITES}")
    if N % H.unit_cell:
        raise ValueError("ring length must be a multiple of the unit cell")
    out = sp.csr_matrix((2**N, 2**N), dtype=complex)
    for cell in range(0, N, H.unit_cell):
        for letters, sites, c in _term_list(H):
            out = out + c * _sparse_string(letters, [s + cell for s in sites], N)
    return out


def ed_ground_energy(H, N):
    """Lowest two eigenvalues of the periodic ring; energy per site and gap."""
    M = ring_hamiltonian(H, N)
    if not np.allclose((M - M.getH()).data, 0):
        raise ArithmeticError("ring Hamiltonian is not Hermitian")
    if N <= 8:
        w = np.linalg.eigvalsh(M.toarray())[:2]
    else:
        w = np.sort(eigsh(M, k=2, which="SA", return_eigenvectors=False))
    return RingSpectrum(N, float(w[0] / N), float(w[1] - w[0]))


def ed_extrapolate(H, sizes=(8, 10, 12, 14)):
    """Quadratic fit in 1/N of the ring energies, evaluated at 1/N = 0."""
    x = np.array([1.0 / n for n in sizes])
    y = np.array([ed_ground_energy(H, n).ground_energy_density for n in sizes])
    coef = np.polyfit(x, y, 2)
    return float(coef[-1]), y


# --------------------------------------------------------------------------- mixed transfer


def exact_mixed_eta(A, B, W=None):
    """Largest-modulus eigenvalue of X -> sum W[t,s] A^s X B^t+ on block tensors."""
    D = A.shape[1]
    if W is not None:
        A = np.einsum("ts,sij->tij", W, A)
    T = np.einsum("sij,skl->ikjl", A, B.conj()).reshape(D * D, D * D)
    vals = np.linalg.eigvals(T)
    return complex(vals[np.argmax(np.abs(vals))])


def loschmidt_rate_dense(A0, At, sites_per_tensor=1):
    eta = exact_mixed_eta(A0, At)
    return float(-2 * np.log(abs(eta)) / sites_per_tensor)
