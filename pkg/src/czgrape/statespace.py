"""Excitation-truncated product basis for two qutrits and a bus.

Basis states are occupation triples ``(n1, n2, nb)`` ordered lexicographically.
With the default truncation of two quanta there are ten of them::

    0 (0,0,0)   1 (0,0,1)   2 (0,0,2)   3 (0,1,0)   4 (0,1,1)
    5 (0,2,0)   6 (1,0,0)   7 (1,0,1)   8 (1,1,0)   9 (2,0,0)

All operators are dense complex matrices on this basis.  Ladder operators
are obtained by projecting the full ladder onto the retained states, so an
element whose source or target lies outside the truncation is simply zero.
"""

from __future__ import annotations

from functools import cached_property
from itertools import product
from typing import NamedTuple

import numpy as np

MODES = ("q1", "q2", "bus")


class BasisState(NamedTuple):
    n1: int
    n2: int
    nb: int

    @property
    def excitations(self) -> int:
        return self.n1 + self.n2 + self.nb

    @property
    def label(self) -> str:
        return f"{self.n1}{self.n2}{self.nb}"


def enumerate_basis(max_excitations: int = 2, levels_per_mode: int = 3) -> list[BasisState]:
    """All occupation triples with at most ``max_excitations`` quanta."""
    if max_excitations < 0:
        raise ValueError("max_excitations must be non-negative")
    if levels_per_mode < 1:
        raise ValueError("levels_per_mode must be at least 1")
    levels = range(levels_per_mode)
    return [
        BasisState(*occ)
        for occ in product(levels, levels, levels)
        if sum(occ) <= max_excitations
    ]


def _mode_index(mode: str) -> int:
    try:
        return MODES.index(mode)
    except ValueError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}") from None


class Basis:
    """Truncated basis plus the operator matrices built on it.

    Instances are effectively immutable; operators are cached on first use
    and returned read-only.
    """

    def __init__(self, max_excitations: int = 2, levels_per_mode: int = 3):
        self.max_excitations = max_excitations
        self.levels_per_mode = levels_per_mode
        self.states = tuple(enumerate_basis(max_excitations, levels_per_mode))
        self.index = {s: i for i, s in enumerate(self.states)}
        self.dim = len(self.states)
        self._cache: dict[tuple, np.ndarray] = {}

    def __repr__(self) -> str:
        return f"Basis(max_excitations={self.max_excitations}, dim={self.dim})"

    def __len__(self) -> int:
        return self.dim

    def state_index(self, n1: int, n2: int, nb: int) -> int:
        return self.index[BasisState(n1, n2, nb)]

    def _frozen(self, key, build) -> np.ndarray:
        if key not in self._cache:
            mat = build()
            mat.setflags(write=False)
            self._cache[key] = mat
        return self._cache[key]

    def lowering_operator(self, mode: str) -> np.ndarray:
        """Annihilation operator of ``mode`` (``sigma^-`` for qubits, ``a`` for the bus)."""
        m = _mode_index(mode)

        def build():
            op = np.zeros((self.dim, self.dim), dtype=complex)
            for col, state in enumerate(self.states):
                n = state[m]
                if n == 0:
                    continue
                target = list(state)
                target[m] -= 1
                row = self.index.get(BasisState(*target))
                if row is not None:
                    op[row, col] = np.sqrt(n)
            return op

        return self._frozen(("lower", m), build)

    def raising_operator(self, mode: str) -> np.ndarray:
        m = _mode_index(mode)
        return self._frozen(("raise", m), lambda: self.lowering_operator(mode).conj().T.copy())

    def number_operator(self, mode: str) -> np.ndarray:
        m = _mode_index(mode)
        return self._frozen(
            ("number", m),
            lambda: np.diag([complex(s[m]) for s in self.states]),
        )

    def projector_level2(self, mode: str) -> np.ndarray:
        m = _mode_index(mode)
        return self._frozen(
            ("level2", m),
            lambda: np.diag([1.0 + 0j if s[m] == 2 else 0j for s in self.states]),
        )

    def excitation_number(self) -> np.ndarray:
        return self._frozen(
            ("total",), lambda: np.diag([complex(s.excitations) for s in self.states])
        )

    @cached_property
    def computational_states(self) -> tuple[BasisState, ...]:
        """|00,0>, |01,0>, |10,0>, |11,0> in that order."""
        return tuple(BasisState(a, b, 0) for a in (0, 1) for b in (0, 1))

    @cached_property
    def computational_indices(self) -> np.ndarray:
        idx = np.array([self.index[s] for s in self.computational_states])
        idx.setflags(write=False)
        return idx

    def computational_projector(self) -> np.ndarray:
        def build():
            p = np.zeros((self.dim, self.dim), dtype=complex)
            p[self.computational_indices, self.computational_indices] = 1.0
            return p

        return self._frozen(("pq",), build)

    def sectors(self) -> list[np.ndarray]:
        """Basis indices grouped by total excitation number."""
        n = np.array([s.excitations for s in self.states])
        return [np.flatnonzero(n == k) for k in range(self.max_excitations + 1)]


DEFAULT_BASIS = Basis()
