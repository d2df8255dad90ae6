"""Dense circuit simulation.

Statevector and density-matrix evolution, Pauli-string expectations,
partial traces, a single-qubit depolarizing channel and shot sampling.

Bit ordering: qubit 0 is the top wire of a circuit and the most significant
bit of a basis index, so ``|q0 q1 ... q_{n-1}>`` has index
``q0 * 2**(n-1) + ... + q_{n-1}``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

MAX_PURE_QUBITS = 12
MAX_MIXED_QUBITS = 8

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

H_GATE = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
CZ = np.diag([1, 1, 1, -1]).astype(complex)


def pauli_matrix(letters: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in letters:
        out = np.kron(out, PAULI[ch])
    return out


@dataclass(frozen=True)
class PauliString:
    """A weighted Pauli string ``coefficient * P_{s0} P_{s1} ...``.

    ``sites`` are qubit indices (or site offsets inside a Hamiltonian window).
    """

    letters: str
    sites: tuple[int, ...]
    coefficient: float = 1.0

    def __post_init__(self):
        if not self.letters:
            raise ValueError("Pauli string must be nonempty")
        if len(self.letters) != len(self.sites):
            raise ValueError("letters and sites differ in length")
        if any(ch not in PAULI for ch in self.letters):
            raise ValueError(f"bad Pauli letters {self.letters!r}")
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("repeated site in Pauli string")
        if not np.isfinite(self.coefficient) or np.iscomplexobj(self.coefficient):
            raise ValueError("coefficient must be a finite real")

    def matrix(self) -> np.ndarray:
        """Matrix of the bare string (coefficient not included)."""
        return pauli_matrix(self.letters)

    def shifted(self, offset: int) -> "PauliString":
        return PauliString(self.letters, tuple(s + offset for s in self.sites), self.coefficient)


Observable = Sequence[PauliString]


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing probability applied to each qubit of every two-qubit gate."""

    eta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")


# --------------------------------------------------------------------------- states


@dataclass(frozen=True)
class PureState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_qubits > MAX_PURE_QUBITS:
            raise ValueError(f"pure simulation capped at {MAX_PURE_QUBITS} qubits")
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError("amplitude vector has wrong length")

    @classmethod
    def zero(cls, n_qubits: int) -> "PureState":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_mixed(self) -> "MixedState":
        return MixedState(self.n_qubits, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class MixedState:
    n_qubits: int
    rho: np.ndarray

    def __post_init__(self):
        if self.n_qubits > MAX_MIXED_QUBITS:
            raise ValueError(f"mixed simulation capped at {MAX_MIXED_QUBITS} qubits")
        dim = 2**self.n_qubits
        if self.rho.shape != (dim, dim):
            raise ValueError("density matrix has wrong shape")

    @classmethod
    def zero(cls, n_qubits: int) -> "MixedState":
        rho = np.zeros((2**n_qubits, 2**n_qubits), dtype=complex)
        rho[0, 0] = 1.0
        return cls(n_qubits, rho)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "MixedState":
        dim = 2**n_qubits
        return cls(n_qubits, np.eye(dim, dtype=complex) / dim)

    def check(self, atol: float = 1e-10) -> None:
        """Raise if the MixedState invariants are violated."""
        if not np.allclose(self.rho, self.rho.conj().T, atol=atol):
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(self.rho) - 1) > atol:
            raise ValueError("density matrix trace differs from 1")
        if np.linalg.eigvalsh(self.rho).min() < -atol:
            raise ValueError("density matrix has negative eigenvalues")


State = Union[PureState, MixedState]


# --------------------------------------------------------------------------- gates


def _check_targets(n: int, targets: Sequence[int]) -> tuple[int, ...]:
    targets = tuple(int(t) for t in targets)
    if len(set(targets)) != len(targets):
        raise ValueError(f"repeated target qubits {targets}")
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"target {t} outside register of {n} qubits")
    return targets


def _apply_to_axes(tensor: np.ndarray, mat: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    k = len(axes)
    op = mat.reshape((2,) * (2 * k))
    out = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def check_unitary(mat: np.ndarray, atol: float = 1e-10) -> None:
    dim = mat.shape[0]
    if mat.shape != (dim, dim) or np.linalg.norm(mat.conj().T @ mat - np.eye(dim)) > atol:
        raise ValueError("gate matrix is not unitary")


def apply_matrix(state: State, mat: np.ndarray, targets: Sequence[int]) -> State:
    """Apply a (not necessarily unitary) operator to ``targets``; no validation of unitarity."""
    n = state.n_qubits
    targets = _check_targets(n, targets)
    if mat.shape != (2 ** len(targets),) * 2:
        raise ValueError("gate arity does not match number of targets")
    if isinstance(state, PureState):
        psi = state.amplitudes.reshape((2,) * n)
        return PureState(n, _apply_to_axes(psi, mat, targets).reshape(-1))
    rho = state.rho.reshape((2,) * (2 * n))
    rho = _apply_to_axes(rho, mat, targets)
    rho = _apply_to_axes(rho, mat.conj(), tuple(t + n for t in targets))
    return MixedState(n, rho.reshape(2**n, 2**n))


def apply_gate(state: State, gate, targets: Sequence[int] | None = None, params=None) -> State:
    """Apply a unitary gate.

    ``gate`` is either an explicit matrix (checked for unitarity) or a
    :class:`Gate`, bound with ``params`` when it is parametrized. ``targets``
    defaults to the gate's own qubits.
    """
    if isinstance(gate, Gate):
        mat = gate.bind(params)
        targets = gate.qubits if targets is None else targets
    else:
        mat = np.asarray(gate, dtype=complex)
        check_unitary(mat)
    if targets is None:
        raise ValueError("targets required for a bare matrix")
    return apply_matrix(state, mat, targets)


def apply_depolarizing(state: MixedState, qubit: int, eta: float) -> MixedState:
    """rho -> (1 - eta) rho + eta/3 (X rho X + Y rho Y + Z rho Z) on ``qubit``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if not isinstance(state, MixedState):
        raise TypeError("depolarizing noise needs a MixedState")
    if eta == 0.0:
        return state
    out = (1 - eta) * state.rho
    for p in (X, Y, Z):
        out = out + eta / 3 * apply_matrix(state, p, (qubit,)).rho
    return MixedState(state.n_qubits, out)


@dataclass(frozen=True)
class Gate:
    """A gate on ``qubits``: either a fixed unitary or ``exp(-i sign theta/2 S)``.

    For the generator form ``generator`` holds the Pauli letters of ``S`` (one
    per qubit) and ``param`` the parameter name; ``sign`` is +-1 and lets
    inverse and conjugate circuits share parameters with the original.
    """

    qubits: tuple[int, ...]
    matrix: np.ndarray | None = None
    generator: str | None = None
    param: str | None = None
    sign: float = 1.0

    def __post_init__(self):
        if (self.matrix is None) == (self.generator is None):
            raise ValueError("give exactly one of matrix or generator")
        if self.generator is not None:
            if len(self.generator) != len(self.qubits) or self.param is None:
                raise ValueError("generator gates need one letter per qubit and a parameter")
        else:
            check_unitary(self.matrix)
            if self.matrix.shape[0] != 2 ** len(self.qubits):
                raise ValueError("matrix arity does not match qubits")

    @property
    def parametrized(self) -> bool:
        return self.generator is not None

    def bind(self, params=None, shift: float = 0.0) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        theta = _lookup(params, self.param) + shift
        s = pauli_matrix(self.generator)
        a = self.sign * theta / 2
        return np.cos(a) * np.eye(s.shape[0]) - 1j * np.sin(a) * s

    def inverse(self) -> "Gate":
        if self.matrix is not None:
            return Gate(self.qubits, matrix=self.matrix.conj().T)
        return Gate(self.qubits, generator=self.generator, param=self.param, sign=-self.sign)

    def conjugate(self) -> "Gate":
        if self.matrix is not None:
            return Gate(self.qubits, matrix=self.matrix.conj())
        # conj(S) = (-1)^{#Y} S
        parity = (-1) ** self.generator.count("Y")
        return Gate(self.qubits, generator=self.generator, param=self.param, sign=-self.sign * parity)

    def remap(self, qubit_map: Sequence[int], prefix: str = "") -> "Gate":
        qubits = tuple(qubit_map[q] for q in self.qubits)
        if self.matrix is not None:
            return Gate(qubits, matrix=self.matrix)
        return Gate(qubits, generator=self.generator, param=prefix + self.param, sign=self.sign)


def _lookup(params, name):
    if params is None:
        raise ValueError(f"parameter {name!r} unbound")
    if isinstance(params, dict):
        return float(params[name])
    raise TypeError("bind gates through ParamCircuit when using a parameter vector")


@dataclass
class ParamCircuit:
    """Ordered gate list over ``n_qubits`` wires with named real parameters."""

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    param_names: list[str] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def add(self, gate: Gate) -> "ParamCircuit":
        _check_targets(self.n_qubits, gate.qubits)
        if gate.param is not None and gate.param not in self.param_names:
            self.param_names.append(gate.param)
        self.gates.append(gate)
        return self

    def fixed(self, matrix: np.ndarray, qubits: Sequence[int]) -> "ParamCircuit":
        return self.add(Gate(tuple(qubits), matrix=np.asarray(matrix, dtype=complex)))

    def rot(self, letters: str, qubits: Sequence[int], param: str, sign: float = 1.0) -> "ParamCircuit":
        return self.add(Gate(tuple(qubits), generator=letters, param=param, sign=sign))

    def extend(self, other: "ParamCircuit", qubits: Sequence[int] | None = None, prefix: str = "") -> "ParamCircuit":
        """Append ``other`` with its wire ``k`` placed on ``qubits[k]``."""
        qubits = list(range(other.n_qubits)) if qubits is None else list(qubits)
        if len(qubits) != other.n_qubits:
            raise ValueError("qubit map has wrong length")
        for g in other.gates:
            self.add(g.remap(qubits, prefix))
        # keep declared order even for parameters without gates
        for name in other.param_names:
            if prefix + name not in self.param_names:
                self.param_names.append(prefix + name)
        return self

    def inverse(self) -> "ParamCircuit":
        return ParamCircuit(self.n_qubits, [g.inverse() for g in reversed(self.gates)], list(self.param_names))

    def conjugate(self) -> "ParamCircuit":
        return ParamCircuit(self.n_qubits, [g.conjugate() for g in self.gates], list(self.param_names))

    def param_dict(self, params) -> dict:
        if isinstance(params, dict):
            return params
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        return dict(zip(self.param_names, params))

    def bound(self, params=None) -> list[tuple[np.ndarray, tuple[int, ...]]]:
        pd = self.param_dict(params) if self.n_params else {}
        return [(g.bind(pd), g.qubits) for g in self.gates]

    def _compiled(self):
        """Full-register matrices per gate: fixed ones, or the generator for rotations."""
        key = len(self.gates)
        cache = getattr(self, "_cache", None)
        if cache is not None and cache[0] == key:
            return cache[1]
        index = {name: k for k, name in enumerate(self.param_names)}
        comp = []
        for g in self.gates:
            if g.parametrized:
                comp.append((index[g.param], g.sign, _embed(pauli_matrix(g.generator), g.qubits, self.n_qubits)))
            else:
                comp.append((None, 1.0, _embed(g.matrix, g.qubits, self.n_qubits)))
        self._cache = (key, comp)
        return comp

    def unitary(self, params=None) -> np.ndarray:
        if self.n_qubits <= 4:
            return self._small_unitary(params)
        dim = 2**self.n_qubits
        # apply gates to all basis columns at once (axis 0 is the batch)
        tensor = np.eye(dim, dtype=complex).reshape((dim,) + (2,) * self.n_qubits)
        for mat, qubits in self.bound(params):
            tensor = _apply_to_axes(tensor, mat, tuple(q + 1 for q in qubits))
        return tensor.reshape(dim, dim).T

    def _small_unitary(self, params=None) -> np.ndarray:
        theta = self._param_vector(params)
        dim = 2**self.n_qubits
        eye = np.eye(dim)
        out = np.eye(dim, dtype=complex)
        for k, sign, m in self._compiled():
            if k is None:
                out = m @ out
            else:
                a = 0.5 * sign * theta[k]
                out = (np.cos(a) * eye - 1j * np.sin(a) * m) @ out
        return out

    def _param_vector(self, params) -> np.ndarray:
        if not self.n_params:
            return np.zeros(0)
        if isinstance(params, dict):
            return np.array([params[n] for n in self.param_names], dtype=float)
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        return params

    def unitary_derivatives(self, params) -> list[np.ndarray]:
        """Exact d(unitary)/d(theta_k) for every parameter.

        Uses dG/dtheta = G(theta + pi)/2 for each generator gate, summed over
        all gates that share the parameter.
        """
        theta = self._param_vector(params)
        dim = 2**self.n_qubits
        eye = np.eye(dim)
        embed, shifted = [], []
        for k, sign, m in self._compiled():
            if k is None:
                embed.append(m)
                shifted.append(None)
            else:
                a = 0.5 * sign * theta[k]
                embed.append(np.cos(a) * eye - 1j * np.sin(a) * m)
                b = a + 0.5 * sign * np.pi
                shifted.append((k, 0.5 * (np.cos(b) * eye - 1j * np.sin(b) * m)))
        prefix = [np.eye(dim, dtype=complex)]
        for e in embed:
            prefix.append(e @ prefix[-1])
        suffix = [np.eye(dim, dtype=complex)]
        for e in reversed(embed):
            suffix.append(suffix[-1] @ e)
        suffix = suffix[::-1]
        derivs = [np.zeros((dim, dim), dtype=complex) for _ in self.param_names]
        for i, sh in enumerate(shifted):
            if sh is not None:
                derivs[sh[0]] += suffix[i + 1] @ sh[1] @ prefix[i]
        return derivs

    def run(self, params=None, state: State | None = None, noise: NoiseModel | None = None) -> State:
        """Simulate the circuit. Noise forces density-matrix mode."""
        if state is None:
            state = MixedState.zero(self.n_qubits) if noise is not None else PureState.zero(self.n_qubits)
        if noise is not None and isinstance(state, PureState):
            state = state.to_mixed()
        for mat, qubits in self.bound(params):
            state = apply_matrix(state, mat, qubits)
            if noise is not None and noise.eta > 0 and len(qubits) == 2:
                for q in qubits:
                    state = apply_depolarizing(state, q, noise.eta)
        return state


def _embed(mat: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    dim = 2**n
    cols = np.eye(dim, dtype=complex).reshape((dim,) + (2,) * n)
    cols = _apply_to_axes(cols, mat, tuple(q + 1 for q in qubits))
    return cols.reshape(dim, dim).T


# --------------------------------------------------------------------------- measurements


def expectation(state: State, obs: Union[PauliString, Iterable[PauliString]]) -> float:
    """Sum_k c_k tr(rho S_k) for a weighted sum of Pauli strings."""
    if isinstance(obs, PauliString):
        obs = [obs]
    total = 0.0 + 0.0j
    for term in obs:
        _check_targets(state.n_qubits, term.sites)
        if isinstance(state, PureState):
            moved = apply_matrix(state, term.matrix(), term.sites)
            val = np.vdot(state.amplitudes, moved.amplitudes)
        else:
            # tr(P rho): act on the row indices only
            n = state.n_qubits
            rho = state.rho.reshape((2,) * n + (2**n,))
            prho = _apply_to_axes(rho, term.matrix(), tuple(term.sites)).reshape(2**n, 2**n)
            val = np.trace(prho)
        total += term.coefficient * val
    if abs(total.imag) > 1e-10:
        raise ValueError(f"observable expectation not real (imag {total.imag:.3e})")
    return float(total.real)


def reduced_density(state: State, keep: Sequence[int]) -> MixedState:
    """Partial trace over the complement of ``keep`` (output ordered as ``keep``)."""
    keep = list(keep)
    if not keep:
        raise ValueError("keep set must be nonempty")
    n = state.n_qubits
    _check_targets(n, keep)
    rest = [q for q in range(n) if q not in keep]
    k = len(keep)
    if isinstance(state, PureState):
        psi = state.amplitudes.reshape((2,) * n).transpose(keep + rest).reshape(2**k, -1)
        rho = psi @ psi.conj().T
    else:
        r = state.rho.reshape((2,) * (2 * n))
        perm = keep + rest + [n + q for q in keep] + [n + q for q in rest]
        r = r.transpose(perm).reshape(2**k, 2 ** (n - k), 2**k, 2 ** (n - k))
        rho = np.einsum("aibi->ab", r)
    return MixedState(k, rho)


def probabilities(state: State) -> np.ndarray:
    if isinstance(state, PureState):
        p = np.abs(state.amplitudes) ** 2
    else:
        p = np.real(np.diag(state.rho)).copy()
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def zero_probability(state: State, qubits: Sequence[int]) -> float:
    """Probability that all of ``qubits`` read 0."""
    rho = reduced_density(state, qubits).rho
    return float(np.real(rho[0, 0]))


def sample_bitstrings(state: State, shots: int, seed: int | None = None) -> Counter:
    """Draw computational-basis samples; returns a Counter of bitstrings."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    p = probabilities(state)
    idx = rng.choice(p.size, size=shots, p=p)
    n = state.n_qubits
    return Counter(format(int(i), f"0{n}b") for i in idx)


_TO_Z = {"X": H_GATE, "Y": H_GATE @ np.diag([1, -1j]), "Z": I2, "I": I2}


def sampled_expectation(state: State, obs: Union[PauliString, Iterable[PauliString]], shots: int,
                        seed: int | None = None) -> float:
    """Shot estimate of a Pauli sum: each term is rotated to Z and measured ``shots`` times."""
    if isinstance(obs, PauliString):
        obs = [obs]
    rng = np.random.default_rng(seed)
    total = 0.0
    for term in obs:
        rotated = state
        for letter, q in zip(term.letters, term.sites):
            rotated = apply_matrix(rotated, _TO_Z[letter], [q])
        counts = sample_bitstrings(rotated, shots, int(rng.integers(2**63)))
        live = [q for letter, q in zip(term.letters, term.sites) if letter != "I"]
        parity = sum(v * (-1) ** sum(int(k[q]) for q in live) for k, v in counts.items())
        total += float(np.real(term.coefficient)) * parity / shots
    return total
