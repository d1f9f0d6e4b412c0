"""Piecewise-constant propagation and the single-qutrit Strauch analyses."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import (
    TWO_PI,
    DeviceParams,
    HamiltonianDecomposition,
    build_decomposition,
    jc_two_excitation_block,
    slice_hamiltonians,
)
from .statespace import Basis

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ControlPulse:
    """Two channels of piecewise-constant qubit-bus detunings.

    Parameters
    ----------
    dt : float
        Pixel duration in ns.
    channels : array, shape (2, n)
        Optimizable detuning pixels in GHz.
    n_buffer : int
        Number of fixed pixels added before and after the optimizable part.
    buffer_values : pair of float
        Detuning of the buffer pixels of each channel, normally the parking
        detuning.
    """

    dt: float
    channels: np.ndarray
    n_buffer: int = 0
    buffer_values: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        ch = np.array(self.channels, dtype=float)
        if ch.ndim != 2 or ch.shape[0] != 2:
            raise ValueError(f"channels must have shape (2, n), got {ch.shape}")
        if not self.dt > 0:
            raise ValueError("pixel duration must be positive")
        if self.n_buffer < 0:
            raise ValueError("n_buffer must be non-negative")
        if ch.shape[1] + 2 * self.n_buffer < 1:
            raise ValueError("pulse needs at least one pixel")
        if not np.all(np.isfinite(ch)):
            raise ValueError("pulse contains non-finite values")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "buffer_values", tuple(float(b) for b in self.buffer_values))
        object.__setattr__(self, "n_buffer", int(self.n_buffer))

    @classmethod
    def constant(cls, dt, n_pixels, values, n_buffer=0, buffer_values=None) -> "ControlPulse":
        values = np.asarray(values, dtype=float)
        channels = np.repeat(values[:, None], n_pixels, axis=1)
        if buffer_values is None:
            buffer_values = tuple(values)
        return cls(dt, channels, n_buffer, buffer_values)

    @property
    def n_pixels(self) -> int:
        return self.channels.shape[1]

    @property
    def n_total(self) -> int:
        return self.n_pixels + 2 * self.n_buffer

    @property
    def duration(self) -> float:
        """Length of the optimizable window in ns."""
        return self.n_pixels * self.dt

    @property
    def total_duration(self) -> float:
        return self.n_total * self.dt

    @property
    def optimizable(self) -> np.ndarray:
        """Boolean mask over ``samples()`` columns."""
        mask = np.zeros(self.n_total, dtype=bool)
        mask[self.n_buffer : self.n_buffer + self.n_pixels] = True
        return mask

    def samples(self) -> np.ndarray:
        """All pixels including buffers, shape ``(2, n_total)``."""
        buf = np.repeat(np.asarray(self.buffer_values)[:, None], self.n_buffer, axis=1)
        return np.concatenate([buf, self.channels, buf], axis=1)

    def times(self) -> np.ndarray:
        """Pixel boundaries in ns, starting at 0."""
        return self.dt * np.arange(self.n_total + 1)

    def with_channels(self, channels) -> "ControlPulse":
        return ControlPulse(self.dt, channels, self.n_buffer, self.buffer_values)

    def swapped(self) -> "ControlPulse":
        return ControlPulse(self.dt, self.channels[::-1], self.n_buffer, self.buffer_values[::-1])


@dataclass
class Trajectory:
    """Populations (and optionally cumulative propagators) at pixel boundaries."""

    times: np.ndarray
    populations: np.ndarray
    labels: tuple[str, ...]
    unitaries: Optional[np.ndarray] = None

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_ns"] + [f"p_{lab}" for lab in self.labels])
            for t, row in zip(self.times, self.populations):
                writer.writerow([repr(float(t))] + [repr(float(p)) for p in row])
        return path


def check_hermitian(h: np.ndarray, tol: float = HERMITIAN_TOL) -> None:
    scale = max(1.0, float(np.max(np.abs(h))))
    resid = np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2))))
    if resid > tol * scale:
        raise ValueError(f"matrix is not Hermitian (residual {resid:.3g})")


def eig_propagators(hs: np.ndarray, dt: float):
    """``exp(-i H dt)`` for a stack of Hermitian matrices.

    Returns ``(U, evals, evecs)``; the eigenpairs are kept for the gradient.
    """
    evals, evecs = np.linalg.eigh(hs)
    phases = np.exp(-1j * dt * evals)
    us = (evecs * phases[..., None, :]) @ np.conj(np.swapaxes(evecs, -1, -2))
    return us, evals, evecs


def expm_hermitian(h, dt: float) -> np.ndarray:
    """Unitary ``exp(-i h dt)`` of a Hermitian matrix via eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    check_hermitian(h)
    h = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    return eig_propagators(h, dt)[0]


def chain_products(us: np.ndarray) -> np.ndarray:
    """Cumulative products ``U_j ... U_1`` with the identity prepended."""
    n, dim = us.shape[0], us.shape[-1]
    out = np.empty((n + 1, dim, dim), dtype=complex)
    out[0] = np.eye(dim)
    for j in range(n):
        np.matmul(us[j], out[j], out=out[j + 1])
    return out


def _decomposition(params_or_decomp, detuning_offset=(0.0, 0.0)) -> HamiltonianDecomposition:
    if isinstance(params_or_decomp, HamiltonianDecomposition):
        return params_or_decomp
    return build_decomposition(params_or_decomp, detuning_offset=detuning_offset)


def propagate_samples(samples, dt: float, decomp: HamiltonianDecomposition) -> np.ndarray:
    """Final propagator for raw detuning samples of shape ``(2, n)``."""
    us = eig_propagators(slice_hamiltonians(decomp, samples), dt)[0]
    total = np.eye(decomp.dim, dtype=complex)
    for u in us:
        total = u @ total
    return total


def propagate(
    pulse: ControlPulse,
    params,
    *,
    samples=None,
    trajectory: bool = False,
    initial_state: Optional[Sequence[int]] = None,
    keep_unitaries: bool = False,
):
    """Propagate a pulse in the rotating frame.

    Parameters
    ----------
    pulse : ControlPulse
        Supplies ``dt`` and, unless ``samples`` is given, the detunings.
    params : DeviceParams or HamiltonianDecomposition
    samples : array, shape (2, pulse.n_total), optional
        Detunings actually seen by the qubits, e.g. a filtered view of
        ``pulse``.
    trajectory : bool
        Also return a :class:`Trajectory` sampled at pixel boundaries.
    initial_state : occupation triple, optional
        Initial basis state for the trajectory populations; default ``|11,0>``.

    Returns
    -------
    U or (U, Trajectory)
    """
    decomp = _decomposition(params)
    if samples is None:
        samples = pulse.samples()
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (2, pulse.n_total):
        raise ValueError(f"samples shape {samples.shape} does not match pulse ({pulse.n_total} pixels)")
    if not trajectory:
        return propagate_samples(samples, pulse.dt, decomp)
    us = eig_propagators(slice_hamiltonians(decomp, samples), pulse.dt)[0]
    cumulative = chain_products(us)
    basis = decomp.basis
    i0 = basis.index[tuple(initial_state)] if initial_state is not None else basis.state_index(1, 1, 0)
    pops = np.abs(cumulative[:, :, i0]) ** 2
    traj = Trajectory(
        times=pulse.times(),
        populations=pops,
        labels=tuple(s.label for s in basis.states),
        unitaries=cumulative if keep_unitaries else None,
    )
    return cumulative[-1], traj


def sector_leakage(u: np.ndarray, basis: Basis) -> float:
    """Largest modulus of any matrix element coupling different excitation sectors."""
    n = np.array([s.excitations for s in basis.states])
    return float(np.max(np.abs(u[n[:, None] != n[None, :]]), initial=0.0))


# Strauch rotation in the three-level qubit + bus model (lab frame, GHz / ns).


def strauch_rotation_time(g: float) -> float:
    """Duration of the 2*pi rotation |1,1> -> |2,0> -> -|1,1> at resonance, ns."""
    return 1.0 / (np.sqrt(2.0) * g)


def _jc_evolution(omega_b, anharmonicity, g, times, block=None):
    h = jc_two_excitation_block(omega_b, -anharmonicity, anharmonicity, g) if block is None else block
    evals, evecs = np.linalg.eigh(TWO_PI * h)
    phases = np.exp(-1j * np.outer(times, evals))
    return np.einsum("ik,tk,jk->tij", evecs, phases, evecs.conj())


@dataclass
class StrauchTrace:
    """Populations of ``|2,0>, |1,1>, |0,2>`` starting from ``|1,1>``."""

    times: np.ndarray
    normalized_times: np.ndarray
    populations: np.ndarray
    rotation_time: float

    @property
    def max_leakage(self) -> float:
        """Peak ``|0,2>`` population over the sampled rotation."""
        return float(self.populations[:, 2].max())


def strauch_rotation_trace(
    omega_b: float, anharmonicity: float, g: float, n_samples: int = 4001, periods: float = 1.0
) -> StrauchTrace:
    """Evolve ``|1,1>`` under the two-excitation block held at ``delta = -anharmonicity``.

    Time is normalized to :func:`strauch_rotation_time`.  Inputs in GHz.
    """
    t_rot = strauch_rotation_time(g)
    times = np.linspace(0.0, periods * t_rot, n_samples)
    u = _jc_evolution(omega_b, anharmonicity, g, times)
    pops = np.abs(u[:, :, 1]) ** 2
    return StrauchTrace(times, times / t_rot, pops, t_rot)


@dataclass
class StrauchPhase:
    times: np.ndarray
    normalized_times: np.ndarray
    phase: np.ndarray
    end_deviation: float


def strauch_phase_deviation(
    omega_b: float,
    anharmonicity: float,
    g: float,
    n_samples: int = 4001,
    two_level: bool = False,
) -> StrauchPhase:
    """Phase of ``<1,1|U(t)|1,1>`` relative to ``exp(-i(2 omega_b - anharmonicity) t)``.

    The curve is unwrapped and has NaN gaps where the amplitude drops below
    1e-12.  ``end_deviation`` is the wrapped difference between the phase at
    the end of the 2*pi rotation and pi.  With ``two_level=True`` the bus
    ``|0,2>`` level is dropped.
    """
    t_rot = strauch_rotation_time(g)
    times = np.linspace(0.0, t_rot, n_samples)
    block = jc_two_excitation_block(omega_b, -anharmonicity, anharmonicity, g)
    if two_level:
        block = block[:2, :2]
        u = _jc_evolution(omega_b, anharmonicity, g, times, block=block)
    else:
        u = _jc_evolution(omega_b, anharmonicity, g, times, block=block)
    amp = u[:, 1, 1]
    rel = amp * np.exp(1j * TWO_PI * (2 * omega_b - anharmonicity) * times)
    phase = np.full(times.shape, np.nan)
    ok = np.abs(amp) >= 1e-12
    phase[ok] = np.angle(rel[ok])
    # unwrap each contiguous run separately so gaps stay gaps
    edges = np.flatnonzero(np.diff(np.r_[0, ok.astype(int), 0]))
    for start, stop in zip(edges[::2], edges[1::2]):
        phase[start:stop] = np.unwrap(phase[start:stop])
    end = float(np.angle(-rel[-1]))
    return StrauchPhase(times, times / t_rot, phase, end)
