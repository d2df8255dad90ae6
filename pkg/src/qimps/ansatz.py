"""Parametrized circuit families for state and environment unitaries.

All families give the identity at zero parameters except where noted.
Parameter packing is layer-major, then wire pair, then the index inside a
block, matching the order in which gates are appended.
"""
from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import asdict, dataclass

import numpy as np

from .qsim import CNOT, CZ, H_GATE, SWAP, ParamCircuit

FAMILIES = ("brick", "full_su4", "full_su2", "env_diag", "env_alt_R", "real_brick", "pxp_site", "env_general")

SU4_BLOCK = 15
REAL_BLOCK = 6
REAL_GENERATORS = ("YI", "IY", "XY", "YX", "ZY", "YZ")


@dataclass(frozen=True)
class AnsatzSpec:
    """Family name plus the sizes needed to lay it out.

    ``n_qubits`` is the circuit width. For ``brick``/``real_brick`` this is
    the number of wires the bricks tile; ``depth`` is the layer count. For
    environment families it is ``2 n`` (bond plus auxiliary wires).
    """

    family: str
    n_qubits: int
    depth: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown ansatz family {self.family!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.family in ("env_diag", "env_general") and self.n_qubits % 2:
            raise ValueError("environment ansatz needs an even number of wires")
        if self.family == "env_alt_R" and self.n_qubits != 2:
            raise ValueError("env_alt_R is defined for D = 2 only")
        if self.family == "full_su4" and self.n_qubits != 2:
            raise ValueError("full_su4 acts on two wires")
        if self.family in ("full_su2",) and self.n_qubits != 1:
            raise ValueError("full_su2 acts on one wire")
        if self.family == "pxp_site" and self.n_qubits != 2:
            raise ValueError("pxp_site acts on (physical, bond) wires")

    @property
    def param_count(self) -> int:
        return template(self).n_params

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "AnsatzSpec":
        return cls(**json.loads(text))


def brick_pairs(n_qubits: int, depth: int) -> list[list[tuple[int, int]]]:
    """Wire pairs per layer. Two wires get the same pair every layer."""
    if n_qubits < 2:
        raise ValueError("brick layout needs at least two wires")
    if n_qubits == 2:
        return [[(0, 1)] for _ in range(depth)]
    layers = []
    for layer in range(depth):
        start = layer % 2
        layers.append([(q, q + 1) for q in range(start, n_qubits - 1, 2)])
    return layers


# --------------------------------------------------------------------------- blocks


def _su2(circ: ParamCircuit, q: int, tag: str) -> None:
    # Rz Ry Rx as a matrix product
    circ.rot("X", (q,), f"{tag}x")
    circ.rot("Y", (q,), f"{tag}y")
    circ.rot("Z", (q,), f"{tag}z")


def _su4(circ: ParamCircuit, a: int, b: int, tag: str) -> None:
    _su2(circ, a, f"{tag}a0")
    _su2(circ, b, f"{tag}b0")
    circ.rot("XX", (a, b), f"{tag}xx")
    circ.rot("YY", (a, b), f"{tag}yy")
    circ.rot("ZZ", (a, b), f"{tag}zz")
    _su2(circ, a, f"{tag}a1")
    _su2(circ, b, f"{tag}b1")


def _real4(circ: ParamCircuit, a: int, b: int, tag: str) -> None:
    for k, g in enumerate(REAL_GENERATORS):
        circ.rot(g, (a, b), f"{tag}r{k}")


def _env_diag(circ: ParamCircuit, n: int, tag: str = "g") -> None:
    for k in range(n):
        name = f"{tag}{k}"
        circ.rot("XY", (k, n + k), name)
        circ.rot("YX", (k, n + k), name)


# --------------------------------------------------------------------------- PXP site


def pxp_entangler() -> np.ndarray:
    """Fixed block on (physical, bond): CZ, a wire swap, then Hadamard on the physical wire.

    The swap lets the rotation angles reach the bond, so the family carries
    nonzero PXP energy; without it every member has zero energy.
    """
    return np.kron(H_GATE, np.eye(2)) @ SWAP @ CZ


def pxp_site_circuit(tag: str = "") -> ParamCircuit:
    """Two-parameter single-site gate Rz(phi) Ry(theta) on one wire."""
    circ = ParamCircuit(1)
    circ.rot("Y", (0,), f"{tag}theta")
    circ.rot("Z", (0,), f"{tag}phi")
    return circ


# --------------------------------------------------------------------------- builders


@lru_cache(maxsize=256)
def template(spec: AnsatzSpec) -> ParamCircuit:
    """Unbound circuit for ``spec``; parameters in packing order.

    Cached per spec, so callers must not modify the returned circuit.
    """
    fam, n = spec.family, spec.n_qubits
    circ = ParamCircuit(n)
    if fam == "full_su2":
        _su2(circ, 0, "u")
    elif fam == "full_su4":
        _su4(circ, 0, 1, "u")
    elif fam == "brick":
        for li, layer in enumerate(brick_pairs(n, spec.depth)):
            for pi, (a, b) in enumerate(layer):
                _su4(circ, a, b, f"L{li}P{pi}")
    elif fam == "real_brick":
        for li, layer in enumerate(brick_pairs(n, spec.depth)):
            for pi, (a, b) in enumerate(layer):
                _real4(circ, a, b, f"L{li}P{pi}")
    elif fam == "env_diag":
        _env_diag(circ, n // 2)
    elif fam == "env_alt_R":
        _env_diag(circ, 1, "t")
        _su2(circ, 0, "u1")
        _su2(circ, 1, "u2")
    elif fam == "env_general":
        # diagonal Schmidt spectrum, then a rotation of the bond wires
        half = n // 2
        _env_diag(circ, half)
        if half == 1:
            _su2(circ, 0, "w")
        else:
            for li, layer in enumerate(brick_pairs(half, spec.depth)):
                for pi, (a, b) in enumerate(layer):
                    _su4(circ, a, b, f"W{li}P{pi}")
    elif fam == "pxp_site":
        circ.extend(pxp_site_circuit(), [0])
        circ.fixed(pxp_entangler(), (0, 1))
    return circ


def build(spec: AnsatzSpec, params) -> ParamCircuit:
    """Template plus a length/finiteness check on ``params``.

    The returned circuit is unbound; bind it with the same ``params``.
    """
    circ = template(spec)
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.size != circ.n_params:
        raise ValueError(f"{spec.family} expects {circ.n_params} parameters, got {params.size}")
    if not np.all(np.isfinite(params)):
        raise ValueError("parameters must be finite")
    return circ


def unitary(spec: AnsatzSpec, params) -> np.ndarray:
    return build(spec, params).unitary(params)


def env_diag(gammas) -> ParamCircuit:
    gammas = np.asarray(gammas, dtype=float).reshape(-1)
    return build(AnsatzSpec("env_diag", 2 * gammas.size), gammas)


def env_diag_spectrum(gammas) -> np.ndarray:
    """Environment eigenvalues housed by env_diag, in tensor-product order."""
    out = np.ones(1)
    for g in np.asarray(gammas, dtype=float).reshape(-1):
        out = np.kron(out, [np.cos(g) ** 2, np.sin(g) ** 2])
    return out


def env_alt_R(theta: float, aux=None) -> ParamCircuit:
    """D = 2 block with housed matrix u1 diag(cos, sin) u2^T."""
    aux = np.zeros(6) if aux is None else np.asarray(aux, dtype=float)
    return build(AnsatzSpec("env_alt_R", 2), np.concatenate([[theta], aux]))


def real_brick(spec: AnsatzSpec, params) -> ParamCircuit:
    if spec.family != "real_brick":
        spec = AnsatzSpec("real_brick", spec.n_qubits, spec.depth)
    return build(spec, params)


def pxp_site(theta: float, phi: float) -> np.ndarray:
    """Bound single-site gate Rz(phi) Ry(theta)."""
    return pxp_site_circuit().unitary([theta, phi])


def state_spec(family: str, n_bond: int = 1, depth: int = 1) -> AnsatzSpec:
    """Ansatz acting on the (physical, bond...) wires of a state unitary."""
    return AnsatzSpec(family, n_bond + 1, depth)


def env_spec(n_bond: int = 1, family: str = "env_general", depth: int = 1) -> AnsatzSpec:
    return AnsatzSpec(family, 2 * n_bond, depth)
