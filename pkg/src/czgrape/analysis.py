"""Spectra, speed-limit sweeps and robustness scans of optimized pulses.

Every scan returns a :class:`ScanResult` whose CSV (long format, one row per
grid point) and JSON sidecar share a basename.  Pulse-based scans accept an
optional ``filter_sigma``: the perturbation is applied to the raw pulse and
the qubits see the filtered result, as in the optimizer.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import ControlPulse, propagate_samples
from .model import DeviceParams, build_decomposition
from .optimizer import OptimizationConfig, TargetGate, fidelity, optimize
from .transfer import GaussianTransferFunction

log = logging.getLogger(__name__)

QSL_SUCCESS_ERROR = 1e-10


# Spectra


@dataclass
class SpectrumResult:
    """One-sided DFT of both channels with the parking baseline removed.

    ``magnitudes`` is normalized so its largest entry is one; ``power`` is the
    unnormalized squared modulus, shape ``(2, n_bins)``.
    """

    frequencies_mhz: np.ndarray
    magnitudes: np.ndarray
    power: np.ndarray

    def power_fraction_above(self, cutoff_mhz: float, channel: Optional[int] = None) -> float:
        """Share of the non-DC power at frequencies strictly above ``cutoff_mhz``."""
        power = self.power if channel is None else self.power[channel : channel + 1]
        non_dc = power[:, 1:].sum()
        if non_dc == 0:
            return 0.0
        above = power[:, self.frequencies_mhz > cutoff_mhz].sum()
        return float(above / non_dc)

    def peak_frequency(self, channel: int) -> float:
        """Frequency of the strongest non-DC bin of ``channel`` in MHz."""
        return float(self.frequencies_mhz[1 + np.argmax(self.power[channel, 1:])])


def pulse_dft(pulse: ControlPulse, samples=None, include_buffers: bool = False) -> SpectrumResult:
    """Spectrum of the detuning excursion from parking, bin spacing ``1/(N dt)``.

    ``samples`` (shape ``(2, n_total)``) replaces the pulse's own samples,
    e.g. to analyse the filtered view.
    """
    seen = pulse.samples() if samples is None else np.asarray(samples, dtype=float)
    if not include_buffers:
        seen = seen[:, pulse.optimizable]
    if seen.shape[1] < 2:
        raise ValueError("spectrum needs at least two pixels")
    excursion = seen - np.asarray(pulse.buffer_values)[:, None]
    coeffs = np.fft.rfft(excursion, axis=1)
    power = np.abs(coeffs) ** 2
    freqs = np.fft.rfftfreq(excursion.shape[1], d=pulse.dt) * 1e3
    mags = np.abs(coeffs)
    peak = mags.max()
    return SpectrumResult(freqs, mags / peak if peak > 0 else mags, power)


# Scan container


@dataclass
class ScanAxis:
    name: str
    values: np.ndarray
    unit: str = ""


@dataclass
class ScanResult:
    """Values on a rectangular grid.

    ``columns`` maps observable names to arrays whose shape is the product of
    the axis lengths.  ``pulses`` optionally carries pulses produced by the
    scan (the speed-limit sweep keeps its best pulse per gate time) and is
    not serialized.
    """

    kind: str
    axes: list
    columns: dict
    metadata: dict = field(default_factory=dict)
    pulses: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        shape = self.shape
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=float)
            if col.shape != shape:
                raise ValueError(f"column {name!r} has shape {col.shape}, grid is {shape}")
            self.columns[name] = col

    @property
    def shape(self) -> tuple:
        return tuple(len(a.values) for a in self.axes)

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def axis(self, name) -> np.ndarray:
        for a in self.axes:
            if a.name == name:
                return np.asarray(a.values)
        raise KeyError(name)

    def rows(self):
        """``(axis values..., column values...)`` per grid point in C order."""
        names = list(self.columns)
        for idx in np.ndindex(*self.shape):
            coords = [float(a.values[i]) for a, i in zip(self.axes, idx)]
            yield coords + [float(self.columns[n][idx]) for n in names]

    def header(self) -> list:
        axis_cols = [f"{a.name}_{a.unit}" if a.unit else a.name for a in self.axes]
        return axis_cols + list(self.columns)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axes": [
                {"name": a.name, "unit": a.unit, "values": [float(v) for v in a.values]}
                for a in self.axes
            ],
            "columns": list(self.columns),
            "shape": list(self.shape),
            "metadata": _jsonable(self.metadata),
        }

    def save(self, basename) -> tuple[Path, Path]:
        """Write ``basename.csv`` and ``basename.json``."""
        base = Path(basename)
        csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in self.rows():
                writer.writerow([repr(v) for v in row])
        json_path.write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def load(cls, basename) -> "ScanResult":
        base = Path(basename)
        meta = json.loads(base.with_suffix(".json").read_text())
        axes = [ScanAxis(a["name"], np.array(a["values"]), a["unit"]) for a in meta["axes"]]
        shape = tuple(meta["shape"])
        with base.with_suffix(".csv").open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            data = np.array([[float(v) for v in row] for row in reader])
        n_axes = len(axes)
        columns = {
            name: data[:, n_axes + i].reshape(shape) for i, name in enumerate(meta["columns"])
        }
        return cls(meta["kind"], axes, columns, meta["metadata"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def pulse_hash(pulse: ControlPulse) -> str:
    h = hashlib.sha256()
    h.update(np.float64(pulse.dt).tobytes())
    h.update(np.ascontiguousarray(pulse.channels).tobytes())
    h.update(np.array([pulse.n_buffer, *pulse.buffer_values], dtype=float).tobytes())
    return h.hexdigest()[:16]


def params_hash(params: DeviceParams) -> str:
    return hashlib.sha256(repr(params).encode()).hexdigest()[:16]


def _pmap(func: Callable, items: Sequence, workers: int) -> list:
    """Ordered map, in a process pool when ``workers > 1``."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) < 2:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(items) // (4 * workers))
        return list(pool.map(func, items, chunksize=chunk))


def _seen(pulse: ControlPulse, filter_sigma: Optional[float]) -> np.ndarray:
    if not filter_sigma:
        return pulse.samples()
    return GaussianTransferFunction(filter_sigma).fit(pulse).transform(pulse)


def _base_metadata(pulse, params, filter_sigma, **extra) -> dict:
    meta = {
        "pulse_id": pulse_hash(pulse),
        "params_hash": params_hash(params),
        "filter_sigma_ns": filter_sigma,
        "pixel_dt_ns": pulse.dt,
        "n_pixels": pulse.n_pixels,
    }
    meta.update(extra)
    return meta


def pulse_fidelity(pulse, params, filter_sigma=None, target: TargetGate = TargetGate(), decomp=None) -> float:
    """Fidelity of ``pulse`` on ``params`` (through the filter if given)."""
    decomp = build_decomposition(params) if decomp is None else decomp
    return fidelity(propagate_samples(_seen(pulse, filter_sigma), pulse.dt, decomp), target)


# Quantum speed limit


def resample_pulse(pulse: ControlPulse, n_pixels: int, dt: float) -> ControlPulse:
    """Stretch ``pulse`` onto ``n_pixels`` pixels of ``dt`` by time rescaling.

    Pixel centres are matched in normalized time and values are linearly
    interpolated.
    """
    old = (np.arange(pulse.n_pixels) + 0.5) / pulse.n_pixels
    new = (np.arange(n_pixels) + 0.5) / n_pixels
    channels = np.stack([np.interp(new, old, ch) for ch in pulse.channels])
    return ControlPulse(dt, channels, pulse.n_buffer, pulse.buffer_values)


def qsl_knee(gate_times, errors, threshold: float = QSL_SUCCESS_ERROR) -> Optional[float]:
    """Shortest gate time of the contiguous successful run starting at the longest time."""
    order = np.argsort(gate_times)[::-1]
    knee = None
    for i in order:
        if errors[i] <= threshold:
            knee = float(gate_times[i])
        else:
            break
    return knee


def qsl_scan(
    gate_times: Sequence[float],
    config: OptimizationConfig,
    params: DeviceParams,
    restarts: int = 1,
    threshold: float = QSL_SUCCESS_ERROR,
    callback: Optional[Callable] = None,
) -> ScanResult:
    """Best error versus gate time, scanning from the longest time down.

    Each time is optimized from the previous optimum stretched onto the new
    grid (warm start) and from ``restarts`` fresh starts of kind
    ``config.initial`` with seeds ``config.seed + 1, 2, ...``; the first gate
    time uses ``config.seed`` for its fresh start instead of a warm start.
    The smallest error is kept.  ``t_qsl_ns`` in the metadata is the knee
    given by :func:`qsl_knee`.
    """
    times = np.sort(np.asarray(gate_times, dtype=float))[::-1]
    if times.size == 0:
        raise ValueError("need at least one gate time")
    errors = np.empty(times.size)
    iterations = np.empty(times.size)
    warm_won = np.zeros(times.size)
    pulses = {}
    terminations = []
    previous = None
    for i, t in enumerate(times):
        cfg = config.replace(gate_time=float(t))
        candidates = []
        if previous is not None:
            warm = resample_pulse(previous, cfg.n_pixels, cfg.pixel_dt)
            candidates.append(("warm", optimize(cfg, params, initial=warm)))
        n_fresh = restarts if previous is not None else max(1, restarts)
        for r in range(n_fresh):
            seed = config.seed + r + (1 if previous is not None else 0)
            candidates.append(("fresh", optimize(cfg.replace(seed=seed), params)))
        kind, best = min(candidates, key=lambda c: c[1].error)
        errors[i] = max(best.error, 0.0)
        iterations[i] = sum(c[1].iterations for c in candidates)
        warm_won[i] = kind == "warm"
        terminations.append(best.termination)
        pulses[float(t)] = best
        previous = best.pulse
        log.info("QSL scan T=%.3g ns: 1-Phi=%.3e (%s)", t, errors[i], kind)
        if callback is not None:
            callback(float(t), best)
    knee = qsl_knee(times, errors, threshold)
    meta = {
        "params_hash": params_hash(params),
        "config": config.to_dict(),
        "restarts": restarts,
        "success_threshold": threshold,
        "t_qsl_ns": knee,
        "terminations": terminations,
        "warm_start": "previous optimum rescaled in time, linear interpolation",
    }
    return ScanResult(
        "qsl",
        [ScanAxis("gate_time", times, "ns")],
        {"error": errors, "iterations": iterations, "warm_start_best": warm_won},
        meta,
        pulses,
    )


# Amplitude noise


def _noise_draw(seed: int, index: int, n_pixels: int) -> np.ndarray:
    return np.random.default_rng([seed, index]).standard_normal((2, n_pixels))


def _noise_errors(args):
    pulse, params, filter_sigma, sigma, seed, n_samples = args
    decomp = build_decomposition(params)
    out = np.empty(n_samples)
    for i in range(n_samples):
        noisy = pulse.channels * (1.0 + sigma * _noise_draw(seed, i, pulse.n_pixels))
        out[i] = 1.0 - pulse_fidelity(pulse.with_channels(noisy), params, filter_sigma, decomp=decomp)
    return out


def amplitude_noise_scan(
    pulse: ControlPulse,
    params: DeviceParams,
    relative_sigmas: Sequence[float],
    n_samples: int = 100,
    seed: int = 0,
    filter_sigma: Optional[float] = None,
    workers: int = 1,
) -> ScanResult:
    """Mean error under multiplicative Gaussian noise on every optimizable pixel.

    Sample ``i`` multiplies each pixel by ``1 + sigma * z`` where ``z`` comes
    from a generator seeded with ``(seed, i)``, so every ``sigma`` reuses the
    same draws.  Columns: ``mean_error``, ``std_error``, ``mean_fidelity`` and
    ``excess_error`` (mean error minus the noiseless error).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    sigmas = np.asarray(relative_sigmas, dtype=float)
    if np.any(sigmas < 0):
        raise ValueError("relative sigmas must be non-negative")
    intrinsic = 1.0 - pulse_fidelity(pulse, params, filter_sigma)
    jobs = [(pulse, params, filter_sigma, s, seed, n_samples) for s in sigmas]
    per_sigma = _pmap(_noise_errors, jobs, workers)
    mean = np.array([e.mean() for e in per_sigma])
    std = np.array([e.std(ddof=1) if n_samples > 1 else 0.0 for e in per_sigma])
    # the sigma = 0 point is the noiseless pulse, bit for bit
    mean[sigmas == 0] = intrinsic
    std[sigmas == 0] = 0.0
    meta = _base_metadata(
        pulse, params, filter_sigma,
        seed=seed, n_samples=n_samples, intrinsic_error=intrinsic,
        noise_model="multiplicative: delta -> delta * (1 + sigma * N(0, 1)) per optimizable pixel",
    )
    return ScanResult(
        "noise",
        [ScanAxis("relative_sigma", sigmas)],
        {
            "mean_error": mean,
            "std_error": std,
            "mean_fidelity": 1.0 - mean,
            "excess_error": mean - intrinsic,
        },
        meta,
    )


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# Calibration offsets


def _calibration_point(args):
    pulse, params, filter_sigma, o1, o2 = args
    decomp = build_decomposition(params, detuning_offset=(o1, o2))
    u = propagate_samples(_seen(pulse, filter_sigma), pulse.dt, decomp)
    i10 = decomp.basis.state_index(1, 0, 0)
    return fidelity(u), float(np.abs(u[i10, i10]) ** 2)


def calibration_scan(
    pulse: ControlPulse,
    params: DeviceParams,
    offsets1: Sequence[float],
    offsets2: Sequence[float],
    filter_sigma: Optional[float] = None,
    workers: int = 1,
) -> ScanResult:
    """Fidelity and ``|U_{10,10}|^2`` when qubit ``k`` misses the bus by ``offsets_k`` GHz.

    The offset enters as ``delta_k -> delta_k + offset_k`` at every pixel,
    buffers included, so the parking points move with it.
    """
    o1 = np.asarray(offsets1, dtype=float)
    o2 = np.asarray(offsets2, dtype=float)
    jobs = [(pulse, params, filter_sigma, a, b) for a, b in product(o1, o2)]
    out = np.array(_pmap(_calibration_point, jobs, workers)).reshape(len(o1), len(o2), 2)
    meta = _base_metadata(
        pulse, params, filter_sigma,
        offset_model="constant shift of each detuning, parking included",
    )
    return ScanResult(
        "calibration",
        [ScanAxis("offset1", o1, "GHz"), ScanAxis("offset2", o2, "GHz")],
        {"fidelity": out[..., 0], "u1010_sq": out[..., 1]},
        meta,
    )


def axis_curvature(x, y, half_width: Optional[float] = None) -> float:
    """Second derivative of a quadratic fitted to ``y(x)`` near ``x = 0``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if half_width is not None:
        keep = np.abs(x) <= half_width
        x, y = x[keep], y[keep]
    return float(2.0 * np.polyfit(x, y, 2)[0])


# Timing offsets


def shift_channel(pulse: ControlPulse, channel: int, delay: float) -> np.ndarray:
    """Samples with one channel delayed by ``delay`` ns, by linear interpolation.

    The channel is treated as the piecewise-linear curve through its pixel
    centres, buffers included, extended by its parking value.
    """
    if abs(delay) > pulse.duration:
        raise ValueError(f"delay {delay} ns exceeds the pulse length {pulse.duration} ns")
    samples = pulse.samples().copy()
    centres = (np.arange(pulse.n_total) + 0.5) * pulse.dt
    park = pulse.buffer_values[channel]
    samples[channel] = np.interp(centres - delay, centres, samples[channel], left=park, right=park)
    return samples


def _timing_point(args):
    pulse, params, filter_sigma, delay = args
    # the delayed channel may spill into the buffers, so shift the full sample set
    samples = shift_channel(pulse, 1, delay)
    if filter_sigma:
        transfer = GaussianTransferFunction(filter_sigma).fit(pulse)
        samples = transfer.transform(samples, pad_values=pulse.buffer_values)
    return fidelity(propagate_samples(samples, pulse.dt, build_decomposition(params)))


def timing_scan(
    pulse: ControlPulse,
    params: DeviceParams,
    delays: Sequence[float],
    filter_sigma: Optional[float] = None,
    workers: int = 1,
) -> ScanResult:
    """Fidelity when channel 2 lags channel 1 by each delay (ns)."""
    delays = np.asarray(delays, dtype=float)
    for d in delays:
        if abs(d) > pulse.duration:
            raise ValueError(f"delay {d} ns exceeds the pulse length {pulse.duration} ns")
    jobs = [(pulse, params, filter_sigma, d) for d in delays]
    fid = np.array(_pmap(_timing_point, jobs, workers))
    meta = _base_metadata(
        pulse, params, filter_sigma,
        interpolation="linear between pixel centres, parking value outside",
    )
    return ScanResult("timing", [ScanAxis("delay", delays, "ns")], {"fidelity": fid}, meta)


# Hamiltonian parameter errors


def perturbed_params(params: DeviceParams, rel_g1: float = 0.0, rel_delta1: float = 0.0) -> DeviceParams:
    """``params`` with ``g1`` and the anharmonicity of qubit 1 scaled by ``1 + rel``."""
    g = (params.g[0] * (1.0 + rel_g1), params.g[1])
    anharm = (params.anharmonicity[0].scaled(1.0 + rel_delta1), params.anharmonicity[1])
    return params.replace(g=g, anharmonicity=anharm)


def _parameter_point(args):
    pulse, params, filter_sigma, eg, ed = args
    return pulse_fidelity(pulse, perturbed_params(params, eg, ed), filter_sigma)


def parameter_error_scan(
    pulse: ControlPulse,
    params: DeviceParams,
    rel_errors_g1: Sequence[float],
    rel_errors_delta1: Sequence[float],
    filter_sigma: Optional[float] = None,
    workers: int = 1,
) -> ScanResult:
    """Fidelity of an unchanged pulse on a device with relative errors in ``g1`` and ``Delta1``."""
    eg = np.asarray(rel_errors_g1, dtype=float)
    ed = np.asarray(rel_errors_delta1, dtype=float)
    jobs = [(pulse, params, filter_sigma, a, b) for a, b in product(eg, ed)]
    fid = np.array(_pmap(_parameter_point, jobs, workers)).reshape(len(eg), len(ed))
    meta = _base_metadata(pulse, params, filter_sigma)
    return ScanResult(
        "params",
        [ScanAxis("rel_error_g1", eg), ScanAxis("rel_error_delta1", ed)],
        {"fidelity": fid},
        meta,
    )
