"""Uniform MPS tensors and their unitary embeddings.

Tensors are arrays ``A[s, i, j]`` (physical index first). A state unitary
``U`` acts on the wires ``[p, b_0, ..., b_{N-1}]`` with the physical wire on
top, and houses the tensor in its ancilla-zero columns::

    <s, i| U |0, j> = A[s, i, j]

so ``U[:, :D]`` stacked over ``s`` is an isometry and the tensor is
left-canonical by construction. The remaining columns form the tangent block.
"""
from __future__ import annotations

import json

import numpy as np

CANON_TOL = 1e-8
DEGENERACY_GAP = 1e-8


class DegenerateEnvironment(ValueError):
    """Raised when the transfer-map fixed point is not unique."""


# --------------------------------------------------------------------------- helpers


def is_unitary(U: np.ndarray, atol: float = 1e-10) -> bool:
    n = U.shape[0]
    return U.shape == (n, n) and np.linalg.norm(U.conj().T @ U - np.eye(n)) < atol


def canonical_residual(A: np.ndarray) -> float:
    """Frobenius norm of sum_s A^s+ A^s - I."""
    D = A.shape[1]
    return float(np.linalg.norm(np.einsum("sij,sik->jk", A.conj(), A) - np.eye(D)))


def complete_columns(cols: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Extend orthonormal columns to a unitary.

    Column-pivoted Gram-Schmidt over the standard basis: at each step the
    basis vector with the largest component orthogonal to the current span is
    added (first index wins ties), so the completion is deterministic.
    """
    n, k = cols.shape
    if np.linalg.norm(cols.conj().T @ cols - np.eye(k)) > 1e-8:
        raise ValueError("columns are not orthonormal")
    basis = [cols[:, m] for m in range(k)]
    Q = cols.copy()
    while len(basis) < n:
        resid = np.eye(n, dtype=complex) - Q @ (Q.conj().T)
        norms = np.linalg.norm(resid, axis=0)
        m = int(np.argmax(norms))
        if norms[m] < tol:
            raise ArithmeticError("basis completion stalled")
        v = resid[:, m] / norms[m]
        # one re-orthogonalization pass for stability
        v = v - Q @ (Q.conj().T @ v)
        v /= np.linalg.norm(v)
        basis.append(v)
        Q = np.column_stack(basis)
    return Q


# --------------------------------------------------------------------------- embedding


def embed_unitary(A: np.ndarray) -> np.ndarray:
    """House a left-canonical tensor in a (d*D) x (d*D) unitary."""
    A = np.asarray(A, dtype=complex)
    d, D, D2 = A.shape
    if D != D2:
        raise ValueError("tensor must be square in its bond indices")
    res = canonical_residual(A)
    if res > CANON_TOL:
        raise ValueError(f"tensor not left-canonical (residual {res:.2e})")
    first = A.reshape(d * D, D)
    if d == 2:
        return complete_columns(first)
    raise ValueError("state unitaries need physical dimension 2")


def extract_mps(U: np.ndarray, d: int = 2) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U):
        raise ValueError("state unitary is not unitary")
    D = U.shape[0] // d
    return U[:, :D].reshape(d, D, D).copy()


def tangent_block(U: np.ndarray, d: int = 2) -> np.ndarray:
    """Columns of ``U`` with nonzero ancilla input, as ``V[s, delta-1, i, j]``.

    Each slice satisfies the gauge condition sum_s A^s+ V^{s,delta} = 0.
    """
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U):
        raise ValueError("state unitary is not unitary")
    D = U.shape[0] // d
    V = U[:, D:].reshape(d, D, d - 1, D).transpose(0, 2, 1, 3)
    A = extract_mps(U, d)
    if gauge_residual(A, V) > 1e-10:
        raise ArithmeticError("tangent gauge condition violated")
    return V


def gauge_residual(A: np.ndarray, V: np.ndarray) -> float:
    return float(np.linalg.norm(np.einsum("sij,sdik->djk", A.conj(), V)))


# --------------------------------------------------------------------------- transfer maps


def transfer_apply(A: np.ndarray, B: np.ndarray, X: np.ndarray, side: str = "right") -> np.ndarray:
    """Mixed transfer map.

    right: X -> sum_s A^s X B^s+ ;  left: X -> sum_s A^s+ X B^s.
    """
    if A.shape != B.shape or X.shape != A.shape[1:]:
        raise ValueError("dimension mismatch in transfer map")
    if side == "right":
        return np.einsum("sij,jl,skl->ik", A, X, B.conj())
    if side == "left":
        return np.einsum("sij,ik,skl->jl", A.conj(), X, B)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def transfer_matrix(A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Dense right transfer matrix acting on row-major vec(X).

    The left map is its conjugate transpose.
    """
    B = A if B is None else B
    d, D, _ = A.shape
    return np.einsum("sij,skl->ikjl", A, B.conj()).reshape(D * D, D * D)


def block_tensor(A: np.ndarray, n: int) -> np.ndarray:
    """Tensor of ``n`` consecutive sites, physical index (s_1, ..., s_n) row-major."""
    out = A
    for _ in range(n - 1):
        out = np.einsum("aij,bjk->abik", out, A).reshape(-1, A.shape[1], A.shape[2])
    return out


def cell_tensor(tensors) -> np.ndarray:
    """Merge a unit cell [A_1, A_2, ...] into one tensor with d = prod(d_k)."""
    out = tensors[0]
    for B in tensors[1:]:
        out = np.einsum("aij,bjk->abik", out, B).reshape(-1, out.shape[1], B.shape[2])
    return out


def block_tensor_pattern(tensors, n_sites: int) -> np.ndarray:
    """Block of ``n_sites`` sites cycling through the unit cell ``tensors``."""
    return cell_tensor([tensors[i % len(tensors)] for i in range(n_sites)])


def gated_transfer_matrix(A: np.ndarray, B: np.ndarray, W: np.ndarray | None = None) -> np.ndarray:
    """Right transfer matrix X -> sum_{s,t} W[t,s] A^s X B^t+ on block tensors."""
    if W is None:
        return transfer_matrix(A, B)
    D = A.shape[1]
    WA = np.einsum("ts,sij->tij", W, A)
    return np.einsum("tij,tkl->ikjl", WA, B.conj()).reshape(D * D, D * D)


def _dominant_near_one(T: np.ndarray, target: complex = 1.0):
    vals, vecs = np.linalg.eig(T)
    order = np.argsort(np.abs(vals - target))
    if len(vals) > 1 and abs(vals[order[1]] - vals[order[0]]) < DEGENERACY_GAP:
        raise DegenerateEnvironment(
            f"transfer fixed point degenerate: eigenvalues {vals[order[0]]:.6g}, {vals[order[1]]:.6g}"
        )
    return vals[order[0]], vecs[:, order[0]]


def _fix_density(v: np.ndarray, D: int) -> np.ndarray:
    r = v.reshape(D, D)
    tr = np.trace(r)
    if abs(tr) < 1e-14:
        raise ArithmeticError("fixed point has zero trace")
    r = r / tr
    return 0.5 * (r + r.conj().T)


def _power_fixed_point(A, side, tol=1e-12, max_iter=10_000):
    D = A.shape[1]
    X = np.eye(D, dtype=complex) / D
    for _ in range(max_iter):
        Y = transfer_apply(A, A, X, side)
        Y = Y / np.trace(Y)
        if np.linalg.norm(Y - X) < tol:
            return Y
        X = Y
    raise ArithmeticError("power iteration did not converge")


def exact_right_env(A: np.ndarray) -> np.ndarray:
    """Right fixed point r of X -> sum A X A+, trace one, Hermitian PSD.

    The eigenvalue nearest to 1 is selected (not the largest modulus), so
    periodic tensors with a -1 eigenvalue still have a unique fixed point.
    """
    D = A.shape[1]
    if D <= 8:
        _, v = _dominant_near_one(transfer_matrix(A))
        return _fix_density(v, D)
    r = _power_fixed_point(A, "right")
    return 0.5 * (r + r.conj().T)


def averaged_right_env(A: np.ndarray) -> np.ndarray:
    """Projection of the identity onto the eigenvalue-1 space of the right map.

    Equals :func:`exact_right_env` when the fixed point is unique; for a
    non-injective tensor it is the environment of the symmetric mixture.
    """
    D = A.shape[1]
    vals, vecs = np.linalg.eig(transfer_matrix(A))
    sel = np.abs(vals - 1) < 1e-8
    if not sel.any():
        return exact_right_env(A)
    proj = vecs[:, sel] @ np.linalg.pinv(vecs)[sel, :]
    return _fix_density(proj @ np.eye(D).reshape(-1), D)


def exact_left_env(A: np.ndarray) -> np.ndarray:
    """Left fixed point l of X -> sum A+ X A, scaled to trace D."""
    D = A.shape[1]
    _, v = _dominant_near_one(transfer_matrix(A).conj().T)
    return _fix_density(v, D) * D


def left_canonicalize(A: np.ndarray):
    """Gauge-transform ``A`` to left-canonical form.

    Returns ``(A_canonical, residual)``. Raises :class:`DegenerateEnvironment`
    when the dominant transfer eigenvalue is not separated from the rest.
    """
    A = np.asarray(A, dtype=complex)
    D = A.shape[1]
    T = transfer_matrix(A)
    vals = np.linalg.eigvals(T)
    order = np.argsort(-np.abs(vals))
    if len(vals) > 1 and abs(vals[order[0]]) - abs(vals[order[1]]) < DEGENERACY_GAP:
        raise DegenerateEnvironment("dominant transfer eigenvalue is degenerate (non-injective tensor)")
    # positive maps have a real positive spectral radius
    A = A / np.sqrt(abs(vals[order[0]]))
    _, v = _dominant_near_one(transfer_matrix(A).conj().T)
    l = _fix_density(v, D)
    w, Q = np.linalg.eigh(l)
    if w.min() <= 1e-14:
        raise DegenerateEnvironment("left fixed point is singular")
    L = (Q * np.sqrt(w)) @ Q.conj().T
    Linv = (Q / np.sqrt(w)) @ Q.conj().T
    out = np.einsum("ab,sbc,cd->sad", L, A, Linv)
    # l is only fixed up to scale; absorb it
    out = out / np.sqrt(np.trace(np.einsum("sij,sik->jk", out.conj(), out)).real / D)
    return out, canonical_residual(out)


# --------------------------------------------------------------------------- environments


def env_to_purification(r: np.ndarray) -> np.ndarray:
    """X = W sqrt(Lambda) with eigenvalues in descending order, so X X+ = r."""
    r = np.asarray(r, dtype=complex)
    if np.linalg.norm(r - r.conj().T) > 1e-8:
        raise ValueError("environment not Hermitian")
    w, W = np.linalg.eigh(0.5 * (r + r.conj().T))
    if w.min() < -1e-10:
        raise ValueError("environment not positive semidefinite")
    if abs(w.sum() - 1) > 1e-8:
        raise ValueError("environment trace differs from 1")
    order = np.argsort(-w, kind="stable")
    w, W = w[order], W[:, order]
    # make the largest entry of each eigenvector real positive
    idx = np.argmax(np.abs(W), axis=0)
    W = W * np.exp(-1j * np.angle(W[idx, np.arange(W.shape[1])]))
    return W * np.sqrt(np.clip(w, 0.0, None))


def embed_environment(r: np.ndarray) -> np.ndarray:
    """Unitary V on [bond, aux] with V|0..0> = vec(X) and X X+ = r."""
    X = env_to_purification(r)
    return complete_columns(X.reshape(-1, 1))


def housed_env(V: np.ndarray) -> np.ndarray:
    """Reduced density on the bond leg of V|0..0>."""
    D = int(round(np.sqrt(V.shape[0])))
    X = V[:, 0].reshape(D, D)
    return X @ X.conj().T


def truncate_env(r: np.ndarray, k: int) -> np.ndarray:
    """Rank-k eigen-truncation (Frobenius-optimal for Hermitian r)."""
    w, W = np.linalg.eigh(r)
    keep = np.argsort(-np.abs(w))[:k]
    return (W[:, keep] * w[keep]) @ W[:, keep].conj().T


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * ((a - b) + (a - b).conj().T))).sum())


# --------------------------------------------------------------------------- serialization


def _pairs(M: np.ndarray) -> list:
    flat = np.asarray(M, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in flat]


def _unpairs(data, shape) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(shape)


def tensor_to_json(A: np.ndarray) -> str:
    d, D, _ = A.shape
    return json.dumps({"kind": "mps_tensor", "d": d, "D": D, "data": _pairs(A)})


def unitary_to_json(U: np.ndarray, d: int = 2) -> str:
    return json.dumps({"kind": "state_unitary", "d": d, "D": U.shape[0] // d, "data": _pairs(U)})


def from_json(text: str) -> np.ndarray:
    rec = json.loads(text)
    d, D = rec["d"], rec["D"]
    if rec["kind"] == "mps_tensor":
        return _unpairs(rec["data"], (d, D, D))
    if rec["kind"] == "state_unitary":
        return _unpairs(rec["data"], (d * D, d * D))
    raise ValueError(f"unknown record kind {rec['kind']!r}")
