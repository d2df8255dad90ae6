"""Translationally invariant local Hamiltonians and their Trotter gates."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .qsim import PAULI, PauliString


@dataclass(frozen=True)
class LocalHamiltonian:
    """H = sum over cells n of the window operator shifted by n * unit_cell.

    ``terms`` hold site offsets inside a window that starts on a cell boundary.
    The energy per site is the window expectation divided by ``unit_cell``.
    """

    terms: tuple[PauliString, ...]
    unit_cell: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.unit_cell not in (1, 2):
            raise ValueError("unit cell must be 1 or 2")
        if not self.terms:
            raise ValueError("Hamiltonian needs at least one term")
        for t in self.terms:
            if len(t.sites) > 3:
                raise ValueError("terms may span at most 3 sites")
            if max(t.sites) - min(t.sites) > 2:
                raise ValueError("terms must sit on at most 3 consecutive sites")
            if min(t.sites) < 0:
                raise ValueError("negative site offset")

    @property
    def window(self) -> int:
        """Sites covered by the window, rounded up to whole cells."""
        w = 1 + max(max(t.sites) for t in self.terms)
        return -(-w // self.unit_cell) * self.unit_cell

    @cached_property
    def window_matrix(self) -> np.ndarray:
        return self.local_matrix(self.window)

    def local_matrix(self, n_sites: int | None = None, offset: int = 0) -> np.ndarray:
        """Dense window operator embedded on ``n_sites`` sites starting at ``offset``."""
        if n_sites is None and offset == 0:
            return self.window_matrix
        n = self.window if n_sites is None else n_sites
        if offset + self.window > n:
            raise ValueError("window does not fit")
        out = np.zeros((2**n, 2**n), dtype=complex)
        for t in self.terms:
            out += t.coefficient * _embed_string(t.letters, [s + offset for s in t.sites], n)
        return out

    def placements(self, n_sites: int) -> list[int]:
        """Cell-aligned offsets at which the window fits inside ``n_sites``."""
        return list(range(0, n_sites - self.window + 1, self.unit_cell))

    def block_matrix(self, n_sites: int) -> np.ndarray:
        """All window placements that lie fully inside an ``n_sites`` block."""
        out = np.zeros((2**n_sites, 2**n_sites), dtype=complex)
        for off in self.placements(n_sites):
            out += self.local_matrix(n_sites, off)
        return out

    def block_fraction(self, n_sites: int) -> float:
        """Share of the chain's window placements captured by tiling blocks."""
        return len(self.placements(n_sites)) / (n_sites // self.unit_cell)

    def trotter_block(self) -> int:
        """Smallest cell-aligned block that holds one window."""
        return self.window

    def trotter_gate(self, dt: float, order: int = 1, time_sign: float = -1.0):
        """Gate for one step and the number of sites it acts on.

        First order keeps only the gate on one sublattice of blocks. That
        sublattice carries a fraction ``f`` of all terms, so the gate time is
        ``dt / f`` to match the tangent-space flow of the full Hamiltonian.
        Second order acts on two blocks as odd(tau/2) even(tau) odd(tau/2).
        """
        B = self.trotter_block()
        if order == 1:
            tau = dt / self.block_fraction(B)
            return expm(time_sign * 1j * tau * self.block_matrix(B)), B
        if order != 2:
            raise ValueError("Trotter order must be 1 or 2")
        n = 2 * B
        odd = np.zeros((2**n, 2**n), dtype=complex)
        even = np.zeros_like(odd)
        for off in self.placements(n):
            local = self.local_matrix(n, off)
            if off % B == 0:
                odd += local
            else:
                even += local
        frac = len(self.placements(n)) / (n // self.unit_cell)
        tau = dt / frac
        half = expm(time_sign * 0.5j * tau * odd)
        return half @ expm(time_sign * 1j * tau * even) @ half, n


def _embed_string(letters: str, sites, n: int) -> np.ndarray:
    ops = [np.eye(2, dtype=complex)] * n
    for ch, s in zip(letters, sites):
        ops[s] = PAULI[ch]
    out = np.ones((1, 1), dtype=complex)
    for o in ops:
        out = np.kron(out, o)
    return out


def tfim(lam: float, J: float = 1.0) -> LocalHamiltonian:
    """J Z Z + lam X with the field split evenly over the two sites of a bond."""
    terms = (
        PauliString("ZZ", (0, 1), float(J)),
        PauliString("X", (0,), 0.5 * float(lam)),
        PauliString("X", (1,), 0.5 * float(lam)),
    )
    return LocalHamiltonian(terms, 1, "tfim", {"lam": float(lam), "J": float(J)})


def pxp(scale: float = 1.0) -> LocalHamiltonian:
    """(1 - Z) X (1 - Z) on every site, two-site unit cell.

    The window covers two cells and holds the terms centred on its sites 1 and 2.
    ``scale = 0.25`` gives the projector normalization.
    """
    terms = []
    for c in (1, 2):
        terms += [
            PauliString("X", (c,), scale),
            PauliString("ZX", (c - 1, c), -scale),
            PauliString("XZ", (c, c + 1), -scale),
            PauliString("ZXZ", (c - 1, c, c + 1), scale),
        ]
    return LocalHamiltonian(tuple(terms), 2, "pxp", {"scale": float(scale)})
