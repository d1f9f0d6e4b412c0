"""Rotating-frame Hamiltonian of two qutrits coupled through a bus.

Unit boundary: everything a user passes in (``DeviceParams``, detunings,
anharmonicity tables) is a *linear* frequency in GHz and times are in ns.
Every Hamiltonian returned by this module for the ten-state system is in
angular units (rad/ns), i.e. already multiplied by ``2*pi``.  The
three-level Jaynes-Cummings helpers at the bottom stay in linear GHz since
they are spectroscopy-style quantities.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator, make_interp_spline

from .statespace import DEFAULT_BASIS, Basis

TWO_PI = 2.0 * np.pi


class AnharmonicityRangeError(ValueError):
    """Detuning outside the sampled range of a tabulated anharmonicity."""


@dataclass(frozen=True)
class ConstantAnharmonicity:
    """Detuning-independent anharmonicity, in GHz."""

    value: float

    is_constant = True

    def __call__(self, detuning):
        return np.full_like(np.asarray(detuning, dtype=float), self.value)

    def derivative(self, detuning):
        return np.zeros_like(np.asarray(detuning, dtype=float))

    def scaled(self, factor: float) -> "ConstantAnharmonicity":
        return ConstantAnharmonicity(self.value * factor)


@dataclass(frozen=True, eq=False)
class TabulatedAnharmonicity:
    """Anharmonicity interpolated from samples ``(detuning, value)``, both GHz.

    ``order=3`` uses a monotone piecewise-cubic (PCHIP) interpolant and
    ``order=1`` piecewise-linear interpolation.  Queries outside the sampled
    range raise :class:`AnharmonicityRangeError`.
    """

    detunings: np.ndarray
    values: np.ndarray
    order: int = 3
    _interp: object = field(init=False, repr=False)

    is_constant = False

    def __post_init__(self):
        x = np.asarray(self.detunings, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("detunings and values must be 1-D arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("tabulated detunings must be strictly increasing")
        if self.order not in (1, 3):
            raise ValueError("interpolation order must be 1 or 3")
        if len(x) < self.order + 1:
            raise ValueError(
                f"order-{self.order} interpolation needs at least {self.order + 1} samples"
            )
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "detunings", x)
        object.__setattr__(self, "values", y)
        interp = PchipInterpolator(x, y) if self.order == 3 else make_interp_spline(x, y, k=1)
        object.__setattr__(self, "_interp", interp)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.detunings[0]), float(self.detunings[-1])

    def _check(self, detuning):
        d = np.asarray(detuning, dtype=float)
        lo, hi = self.domain
        bad = (d < lo) | (d > hi)
        if np.any(bad):
            first = np.flatnonzero(np.ravel(bad))[0]
            raise AnharmonicityRangeError(
                f"detuning {np.ravel(d)[first]:.6g} GHz at pixel {first} outside "
                f"tabulated range [{lo:.6g}, {hi:.6g}] GHz"
            )
        return d

    def __call__(self, detuning):
        return self._interp(self._check(detuning))

    def derivative(self, detuning):
        return self._interp.derivative()(self._check(detuning))

    def scaled(self, factor: float) -> "TabulatedAnharmonicity":
        """The same curve with every value multiplied by ``factor``."""
        return TabulatedAnharmonicity(self.detunings, self.values * factor, self.order)

    @classmethod
    def from_csv(cls, path: Union[str, Path], order: int = 3) -> "TabulatedAnharmonicity":
        """Read a two-column CSV: detuning in GHz, anharmonicity in MHz, one header line."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: expected a header line followed by samples")
        try:
            data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed anharmonicity table ({exc})") from None
        return cls(data[:, 0], data[:, 1] * 1e-3, order=order)


AnharmonicityModel = Union[ConstantAnharmonicity, TabulatedAnharmonicity]


def _as_model(value) -> AnharmonicityModel:
    if isinstance(value, (ConstantAnharmonicity, TabulatedAnharmonicity)):
        return value
    return ConstantAnharmonicity(float(value))


@dataclass(frozen=True)
class DeviceParams:
    """Bus and qubit parameters, all in linear GHz.

    Parameters
    ----------
    omega_b : float
        Bus frequency.
    omega_park : pair of float
        Parking frequency of each qubit.
    g : pair of float
        Qubit-bus coupling of each qubit.  A swap time ``T`` corresponds to
        ``g = 1 / (2 T)``.
    anharmonicity : pair of float or AnharmonicityModel
        Plain numbers are wrapped in :class:`ConstantAnharmonicity`.
    """

    omega_b: float
    omega_park: tuple[float, float]
    g: tuple[float, float]
    anharmonicity: tuple[AnharmonicityModel, AnharmonicityModel]

    def __post_init__(self):
        object.__setattr__(self, "omega_park", tuple(float(w) for w in self.omega_park))
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        object.__setattr__(self, "anharmonicity", tuple(_as_model(a) for a in self.anharmonicity))
        if len(self.omega_park) != 2 or len(self.g) != 2 or len(self.anharmonicity) != 2:
            raise ValueError("exactly two qubits are supported")
        if not self.omega_b > 0:
            raise ValueError("omega_b must be positive")
        for k, gk in enumerate(self.g, start=1):
            if gk < 0:
                raise ValueError(f"coupling g{k} must be non-negative, got {gk}")
            if gk > 0.1 * self.omega_b:
                warnings.warn(
                    f"g{k} = {gk} GHz exceeds 10% of the bus frequency; "
                    "the rotating-wave model may be inaccurate",
                    stacklevel=3,
                )

    @classmethod
    def from_swap_times(cls, omega_b, omega_park, swap_times, anharmonicity) -> "DeviceParams":
        """Couplings from qubit-bus swap times in ns."""
        return cls(omega_b, omega_park, tuple(1.0 / (2.0 * t) for t in swap_times), anharmonicity)

    @classmethod
    def dimensionless(
        cls,
        omega_b: float = 5.0,
        anharmonicity_ratio: Sequence[float] = (-0.1, -0.1),
        g_ratio: float = 0.02,
        park_factor: float = 10.0,
    ) -> "DeviceParams":
        """Device with parameters given as fractions of the bus frequency.

        Both qubits park ``park_factor * g`` above the bus.
        """
        g = g_ratio * omega_b
        park = omega_b + park_factor * g
        return cls(
            omega_b,
            (park, park),
            (g, g),
            tuple(r * omega_b for r in anharmonicity_ratio),
        )

    @property
    def parking_detuning(self) -> np.ndarray:
        return np.array(self.omega_park) - self.omega_b

    @property
    def swap_times(self) -> tuple[float, float]:
        return tuple(np.inf if gk == 0 else 1.0 / (2.0 * gk) for gk in self.g)

    def replace(self, **changes) -> "DeviceParams":
        return replace(self, **changes)

    def swapped(self) -> "DeviceParams":
        """The same device with the two qubits exchanged."""
        return DeviceParams(
            self.omega_b, self.omega_park[::-1], self.g[::-1], self.anharmonicity[::-1]
        )


@dataclass(frozen=True, eq=False)
class HamiltonianDecomposition:
    """``H(d1, d2) = drift + sum_k d_k * controls[k] + sum_k A_k(d_k) * level2[k]``.

    All matrices are angular (rad/ns) for detunings given in GHz.  For
    constant anharmonicity the ``A_k * level2[k]`` term is folded into the
    drift and the corresponding entry of ``tabulated`` is ``None``.
    """

    drift: np.ndarray
    controls: np.ndarray
    level2: np.ndarray
    tabulated: tuple
    basis: Basis

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def is_linear(self) -> bool:
        return all(m is None for m in self.tabulated)


def build_decomposition(
    params: DeviceParams,
    basis: Basis = DEFAULT_BASIS,
    detuning_offset: Sequence[float] = (0.0, 0.0),
) -> HamiltonianDecomposition:
    """Split the rotating-frame Hamiltonian into drift and the two controls.

    ``detuning_offset`` (GHz) adds ``offset_k * n_k`` to the drift, which
    models a systematic miss of the qubit-bus resonance point.
    """
    a = basis.lowering_operator("bus")
    drift = np.zeros((basis.dim, basis.dim), dtype=complex)
    controls = []
    level2 = []
    tabulated = []
    for k, mode in enumerate(("q1", "q2")):
        sp = basis.raising_operator(mode)
        n_k = basis.number_operator(mode)
        p2 = basis.projector_level2(mode)
        # sigma- a^dag as a product of truncated matrices would pass through
        # three-quantum states and lose elements; sigma+ a never leaves the basis
        exchange = sp @ a
        drift += 0.5 * params.g[k] * (exchange + exchange.conj().T)
        drift += detuning_offset[k] * n_k
        model = params.anharmonicity[k]
        if model.is_constant:
            drift += model.value * p2
            tabulated.append(None)
        else:
            tabulated.append(model)
        controls.append(n_k)
        level2.append(p2)
    drift = TWO_PI * drift
    controls = TWO_PI * np.array(controls)
    level2 = TWO_PI * np.array(level2)
    for m in (drift, controls, level2):
        m.setflags(write=False)
    return HamiltonianDecomposition(drift, controls, level2, tuple(tabulated), basis)


def _anharm_coefficients(decomp, samples):
    """Per-qubit (value, derivative) of the tabulated anharmonicities, GHz."""
    samples = np.asarray(samples, dtype=float)
    values = np.zeros_like(samples)
    slopes = np.zeros_like(samples)
    for k, model in enumerate(decomp.tabulated):
        if model is not None:
            values[k] = model(samples[k])
            slopes[k] = model.derivative(samples[k])
    return values, slopes


def slice_hamiltonians(decomp: HamiltonianDecomposition, samples) -> np.ndarray:
    """Stack of Hamiltonians for detuning samples of shape ``(2, n)``."""
    samples = np.asarray(samples, dtype=float)
    h = decomp.drift + np.einsum("kn,kij->nij", samples, decomp.controls)
    if not decomp.is_linear:
        values, _ = _anharm_coefficients(decomp, samples)
        h = h + np.einsum("kn,kij->nij", values, decomp.level2)
    return h


def control_derivatives(decomp: HamiltonianDecomposition, samples) -> np.ndarray:
    """``dH/d(delta_k)`` at every sample, shape ``(2, n, dim, dim)``.

    For a tabulated anharmonicity this is the control operator of the
    Hamiltonian linearized at that sample.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[1]
    out = np.broadcast_to(decomp.controls[:, None], (2, n, decomp.dim, decomp.dim)).copy()
    if not decomp.is_linear:
        _, slopes = _anharm_coefficients(decomp, samples)
        out += slopes[:, :, None, None] * decomp.level2[:, None]
    return out


def hamiltonian_at(decomp: HamiltonianDecomposition, delta1: float, delta2: float) -> np.ndarray:
    """Hamiltonian (rad/ns) for qubit-bus detunings ``delta1, delta2`` in GHz."""
    return slice_hamiltonians(decomp, [[delta1], [delta2]])[0]


def linearize(decomp: HamiltonianDecomposition, delta1: float, delta2: float):
    """Drift and controls of the Hamiltonian linearized around ``(delta1, delta2)``.

    Returns ``(drift, control1, control2)`` such that
    ``drift + delta1*control1 + delta2*control2`` reproduces
    :func:`hamiltonian_at` at the expansion point.
    """
    point = np.array([[delta1], [delta2]], dtype=float)
    values, slopes = _anharm_coefficients(decomp, point)
    drift = decomp.drift.copy()
    controls = []
    for k in range(2):
        drift += (values[k, 0] - slopes[k, 0] * point[k, 0]) * decomp.level2[k]
        controls.append(decomp.controls[k] + slopes[k, 0] * decomp.level2[k])
    return drift, controls[0], controls[1]


# Three-level qubit + bus, two-excitation block, linear GHz.

JC_BLOCK_STATES = ("|2,0>", "|1,1>", "|0,2>")


def jc_two_excitation_block(omega_b: float, delta: float, anharmonicity: float, g: float) -> np.ndarray:
    """Two-excitation block over ``|2,0>, |1,1>, |0,2>`` (qubit, bus), in GHz.

    Off-diagonal elements are ``sqrt(2) * g / 2``, i.e. the coupling is
    ``(g/2)(sigma+ a + sigma- a^dag)`` as in the ten-state model.
    """
    c = np.sqrt(2.0) * g / 2.0
    return np.array(
        [
            [2 * omega_b + 2 * delta + anharmonicity, c, 0.0],
            [c, 2 * omega_b + delta, c],
            [0.0, c, 2 * omega_b],
        ]
    )


def jc_bare_energies(omega_b, deltas, anharmonicity) -> np.ndarray:
    d = np.asarray(deltas, dtype=float)
    return np.stack(
        [2 * omega_b + 2 * d + anharmonicity, 2 * omega_b + d, np.full_like(d, 2 * omega_b)], axis=-1
    )


def jc_spectrum(omega_b: float, anharmonicity: float, g: float, deltas) -> np.ndarray:
    """Dressed energies of the two-excitation block versus detuning.

    Returns an array of shape ``(len(deltas), 3)``.  Branches are labelled by
    energy order (lowest first) at every detuning; with ``g > 0`` levels
    never cross so each column is a continuous curve.
    """
    deltas = np.asarray(deltas, dtype=float)
    blocks = np.array([jc_two_excitation_block(omega_b, d, anharmonicity, g) for d in deltas])
    return np.linalg.eigvalsh(blocks)
