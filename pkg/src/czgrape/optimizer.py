"""GRAPE for the controlled-Z gate with a BFGS pulse update."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import line_search
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import ControlPulse, chain_products, eig_propagators
from .model import (
    DeviceParams,
    HamiltonianDecomposition,
    build_decomposition,
    control_derivatives,
    slice_hamiltonians,
)
from .statespace import DEFAULT_BASIS, Basis
from .transfer import GaussianTransferFunction

log = logging.getLogger(__name__)

CZ = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
MACHINE_PRECISION_ERROR = 1e-12

TARGET_REACHED = "target-reached"
STALLED = "stalled"
MAX_ITERATIONS = "max-iterations"

# scipy warns on every failed line search; failures are handled as resets or stalls
_LINE_SEARCH_NOISE = r"(The line search algorithm|Rounding errors prevent)"


@dataclass(frozen=True, eq=False)
class TargetGate:
    """A gate on the computational subspace ``|00,0>, |01,0>, |10,0>, |11,0>``."""

    unitary: np.ndarray = field(default_factory=lambda: CZ.copy())
    basis: Basis = DEFAULT_BASIS

    def __post_init__(self):
        u = np.asarray(self.unitary, dtype=complex)
        if u.shape != (4, 4):
            raise ValueError("target must be a 4x4 matrix")
        if np.max(np.abs(u.conj().T @ u - np.eye(4))) > 1e-12:
            raise ValueError("target is not unitary")
        u.setflags(write=False)
        object.__setattr__(self, "unitary", u)

    @property
    def dim(self) -> int:
        return 4

    def embedded(self) -> np.ndarray:
        """The target placed in the full basis, zero outside the computational block."""
        idx = self.basis.computational_indices
        full = np.zeros((self.basis.dim, self.basis.dim), dtype=complex)
        full[np.ix_(idx, idx)] = self.unitary
        return full

    def overlap_matrix(self) -> np.ndarray:
        """``M`` with ``Tr(M U) = Tr(U_t^dag P U P)``."""
        return self.embedded().conj().T


def fidelity(u: np.ndarray, target: TargetGate = TargetGate()) -> float:
    """Phase-insensitive overlap ``|Tr(U_t^dag P U P)|^2 / d^2`` with ``d = 4``."""
    idx = target.basis.computational_indices
    tr = np.trace(target.unitary.conj().T @ u[np.ix_(idx, idx)])
    return float(np.abs(tr) ** 2 / target.dim**2)


def _frechet_weights(evals: np.ndarray, dt: float) -> np.ndarray:
    """Eigenbasis weights ``G_ab`` of the derivative of ``exp(-i H dt)``.

    ``G_ab = (e^{-i l_a dt} - e^{-i l_b dt}) / (l_a - l_b)``, written with a
    sinc so the degenerate limit ``-i dt e^{-i l_a dt}`` needs no branch.
    """
    la = evals[..., :, None]
    lb = evals[..., None, :]
    mean = 0.5 * (la + lb)
    half = 0.5 * (la - lb)
    return -1j * dt * np.exp(-1j * mean * dt) * np.sinc(half * dt / np.pi)


def fidelity_and_gradient(samples, dt: float, decomp: HamiltonianDecomposition, target: TargetGate):
    """Fidelity and its exact gradient w.r.t. every sample, shape ``(2, n)``.

    For tabulated anharmonicities the control operator at each pixel is the
    one of the Hamiltonian linearized at that pixel's current value.
    """
    samples = np.asarray(samples, dtype=float)
    hs = slice_hamiltonians(decomp, samples)
    us, evals, evecs = eig_propagators(hs, dt)
    forward = chain_products(us)  # forward[j] = U_j ... U_1
    n, dim = us.shape[0], decomp.dim
    backward = np.empty((n + 1, dim, dim), dtype=complex)  # backward[j] = U_n ... U_{j+1}
    backward[n] = np.eye(dim)
    for j in range(n - 1, -1, -1):
        np.matmul(backward[j + 1], us[j], out=backward[j])
    m = target.overlap_matrix()
    tr = np.trace(m @ forward[-1])
    phi = float(np.abs(tr) ** 2 / target.dim**2)

    # d tr / d theta_kj = Tr(F_{j-1} M B_j dU_j), evaluated in the eigenbasis of H_j
    q = forward[:-1] @ m @ backward[1:]
    vh = np.conj(np.swapaxes(evecs, -1, -2))
    q_eig = vh @ q @ evecs
    dh_eig = vh[None] @ control_derivatives(decomp, samples) @ evecs[None]
    weights = _frechet_weights(evals, dt)
    dtr = np.einsum("jba,kjab,jab->kj", q_eig, dh_eig, weights)
    grad = 2.0 * np.real(np.conj(tr) * dtr) / target.dim**2
    return phi, grad


def grape_gradient(
    pulse: ControlPulse,
    params,
    target: TargetGate = TargetGate(),
    transfer: Optional[GaussianTransferFunction] = None,
) -> np.ndarray:
    """Gradient of the fidelity w.r.t. the optimizable pixels, shape ``(2, n_pixels)``.

    With ``transfer`` the qubits see the filtered pulse and the gradient is
    taken through the filter.
    """
    decomp = params if isinstance(params, HamiltonianDecomposition) else build_decomposition(params)
    return _pulse_objective(pulse, decomp, target, transfer)[1]


def _pulse_objective(pulse, decomp, target, transfer):
    samples = pulse.samples()
    if transfer is not None:
        samples = transfer.transform(samples, pad_values=pulse.buffer_values)
    phi, grad = fidelity_and_gradient(samples, pulse.dt, decomp, target)
    if transfer is not None:
        grad = transfer.adjoint(grad, pulse.dt)
    return phi, grad[:, pulse.optimizable]


@dataclass
class OptimizationConfig:
    """Settings of one GRAPE run.  Frequencies in GHz, times in ns.

    ``gate_time`` is the optimizable window; the ``n_buffer`` parking pixels
    on each side come on top of it.  The pixel count is
    ``round(gate_time / dt)`` and the actual pixel duration is adjusted so
    the window is exactly ``gate_time`` long.

    ``initial`` selects the starting pulse:

    * ``"constant"``: every pixel at ``initial_detuning`` (default: parking).
    * ``"random"``: ``initial_detuning`` (default 0, the bus resonance) plus at
      most five seeded sinusoids ``sin(pi m t / T)`` of frequency below
      ``2 g`` and amplitude ``initial_amplitude`` (default ``g``), plus white
      jitter.
    * ``"nudge"``: the Ginger channel at parking and the channel named by
      ``fred`` at ``-anharmonicity / 2``, where its doubly excited state is
      resonant with two photons in the bus, plus white jitter.
    """

    gate_time: float
    dt: float = 0.5
    n_buffer: int = 5
    parking: Optional[tuple[float, float]] = None
    target_error: float = 1e-4
    max_iterations: int = 5000
    gtol: float = 1e-10
    filter_sigma: Optional[float] = None
    initial: str = "random"
    seed: int = 0
    fred: int = 2
    initial_detuning: Optional[tuple[float, float]] = None
    initial_amplitude: Optional[float] = None
    initial_jitter: float = 0.01
    initial_step: float = 0.01

    def __post_init__(self):
        if not self.gate_time > 0 or not self.dt > 0:
            raise ValueError("gate_time and dt must be positive")
        if not self.target_error > 0:
            raise ValueError("target_error must be positive")
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"initial must be one of {INITIAL_KINDS}, got {self.initial!r}")
        if self.fred not in (1, 2):
            raise ValueError("fred must be 1 or 2")
        if self.filter_sigma is not None and not self.filter_sigma > 0:
            raise ValueError("filter_sigma must be positive when set")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")

    @property
    def n_pixels(self) -> int:
        return max(1, int(round(self.gate_time / self.dt)))

    @property
    def pixel_dt(self) -> float:
        return self.gate_time / self.n_pixels

    def parking_for(self, params: DeviceParams) -> tuple[float, float]:
        if self.parking is not None:
            return tuple(float(p) for p in self.parking)
        return tuple(float(p) for p in params.parking_detuning)

    def replace(self, **changes) -> "OptimizationConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


INITIAL_KINDS = ("constant", "random", "nudge")


def initial_pulse(config: OptimizationConfig, params: DeviceParams) -> ControlPulse:
    """Starting pulse for ``config.initial``; deterministic given ``config.seed``."""
    n, dt = config.n_pixels, config.pixel_dt
    park = np.array(config.parking_for(params))
    rng = np.random.default_rng(config.seed)
    kind = config.initial
    if kind == "constant":
        level = park if config.initial_detuning is None else np.asarray(config.initial_detuning, float)
        channels = np.repeat(level[:, None], n, axis=1)
    elif kind == "random":
        center = np.zeros(2) if config.initial_detuning is None else np.asarray(config.initial_detuning, float)
        amp = np.array(params.g) if config.initial_amplitude is None else np.full(2, config.initial_amplitude)
        t = (np.arange(n) + 0.5) / n
        # sin(pi m t / T) has frequency m / (2T); keep it below 2 g
        channels = np.repeat(center[:, None], n, axis=1)
        for k in range(2):
            n_modes = int(min(5, max(1, np.ceil(4.0 * params.g[k] * config.gate_time) - 1)))
            coeffs = amp[k] * rng.standard_normal(n_modes)
            modes = np.sin(np.pi * np.outer(np.arange(1, n_modes + 1), t))
            channels[k] += coeffs @ modes
        channels += config.initial_jitter * rng.standard_normal((2, n))
    else:
        fred = config.fred - 1
        ginger = 1 - fred
        channels = np.empty((2, n))
        channels[ginger] = park[ginger]
        channels[fred] = -0.5 * _anharmonicity_at(params.anharmonicity[fred], park[fred])
        channels += config.initial_jitter * rng.standard_normal((2, n))
    return ControlPulse(dt, channels, config.n_buffer, tuple(park))


def _anharmonicity_at(model, detuning) -> float:
    if model.is_constant:
        return model.value
    # self-consistent resonance point delta = -A(delta) / 2 on the tabulated curve
    lo, hi = model.domain
    d = float(np.clip(detuning, lo, hi))
    for _ in range(50):
        d = float(np.clip(-0.5 * model(d), lo, hi))
    return float(model(d))


@dataclass
class OptimizationResult:
    """Outcome of :func:`optimize`.

    ``fidelity_history[i]`` is the fidelity after ``i`` accepted BFGS steps.
    ``filtered`` holds the samples the qubits see (buffers included) when a
    transfer function was used.
    """

    pulse: ControlPulse
    fidelity_history: list
    gradient_norms: list
    termination: str
    wall_time: float
    config: OptimizationConfig
    filtered: Optional[np.ndarray] = None
    n_evaluations: int = 0

    @property
    def fidelity(self) -> float:
        return self.fidelity_history[-1]

    @property
    def error(self) -> float:
        return 1.0 - self.fidelity

    @property
    def iterations(self) -> int:
        return len(self.fidelity_history) - 1

    @property
    def success(self) -> bool:
        return self.termination == TARGET_REACHED

    def seen_samples(self) -> np.ndarray:
        return self.pulse.samples() if self.filtered is None else self.filtered

    def to_dict(self) -> dict:
        return {
            "termination": self.termination,
            "fidelity": self.fidelity,
            "error": self.error,
            "iterations": self.iterations,
            "n_evaluations": self.n_evaluations,
            "wall_time_s": self.wall_time,
            "seed": self.config.seed,
            "pixel_dt_ns": self.pulse.dt,
            "n_pixels": self.pulse.n_pixels,
            "n_buffer": self.pulse.n_buffer,
            "buffer_values_ghz": list(self.pulse.buffer_values),
            "config": self.config.to_dict(),
            "fidelity_history": list(self.fidelity_history),
            "gradient_norms": list(self.gradient_norms),
        }


class _Objective:
    """``1 - Phi`` and its gradient over the flattened optimizable pixels."""

    def __init__(self, template, decomp, target, transfer):
        self.template = template
        self.decomp = decomp
        self.target = target
        self.transfer = transfer
        self.bounds = self._table_bounds(decomp)
        self.n_evaluations = 0
        self._x = None
        self._value = None

    @staticmethod
    def _table_bounds(decomp):
        lo = np.full(2, -np.inf)
        hi = np.full(2, np.inf)
        for k, model in enumerate(decomp.tabulated):
            if model is not None:
                lo[k], hi[k] = model.domain
        return lo, hi

    def clip(self, x):
        lo, hi = self.bounds
        ch = x.reshape(2, -1)
        return np.clip(ch, lo[:, None], hi[:, None]).ravel()

    def __call__(self, x):
        if self._x is None or not np.array_equal(x, self._x):
            xc = self.clip(x)
            pulse = self.template.with_channels(xc.reshape(2, -1))
            phi, grad = _pulse_objective(pulse, self.decomp, self.target, self.transfer)
            grad = np.where(xc == x, grad.ravel(), 0.0)
            self._x = np.array(x, copy=True)
            self._value = (1.0 - phi, -grad)
            self.n_evaluations += 1
        return self._value

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def bfgs(objective, x0, *, target_error, max_iterations, gtol, initial_step, callback=None):
    """Full-memory BFGS with a strong-Wolfe line search (c1=1e-4, c2=0.9).

    Returns ``(x, history, gradient_norms, termination)``.  A line-search
    failure from a freshly reset inverse Hessian ends the run as stalled.
    """
    x = np.array(x0, dtype=float)
    f, g = objective(x)
    history, gnorms = [f], [float(np.max(np.abs(g)))]
    hinv = None
    old_old = None
    dim = x.size
    eye = np.eye(dim)
    while True:
        if f <= target_error:
            reason = TARGET_REACHED
            break
        if gnorms[-1] <= gtol:
            reason = STALLED
            break
        if len(history) - 1 >= max_iterations:
            reason = MAX_ITERATIONS
            break
        if hinv is None:
            p = -g * (initial_step / max(gnorms[-1], 1e-300))
        else:
            p = -hinv @ g
            if p @ g >= 0:
                hinv = None
                continue
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=_LINE_SEARCH_NOISE)
            alpha, *_ = line_search(
                objective.f, objective.g, x, p, gfk=g, old_fval=f,
                old_old_fval=old_old if hinv is not None else None,
                c1=1e-4, c2=0.9, maxiter=30,
            )
        if alpha is None:
            if hinv is None:
                reason = STALLED
                break
            log.debug("line search failed; resetting inverse Hessian")
            hinv, old_old = None, None
            continue
        x_new = x + alpha * p
        f_new, g_new = objective(x_new)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-300:
            if hinv is None:
                hinv = (sy / float(y @ y)) * eye
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = hinv + ((sy + y @ hy) * rho**2) * np.outer(s, s) - rho * (np.outer(hy, s) + np.outer(s, hy))
        old_old, x, f, g = f, x_new, f_new, g_new
        history.append(f)
        gnorms.append(float(np.max(np.abs(g))))
        if callback is not None:
            callback(len(history) - 1, f, x)
    return x, history, gnorms, reason


def optimize(
    config: OptimizationConfig,
    params: DeviceParams,
    target: TargetGate = TargetGate(),
    initial: Optional[ControlPulse] = None,
    callback=None,
) -> OptimizationResult:
    """Maximize the CZ fidelity over the optimizable pixels with BFGS.

    ``initial`` overrides the starting pulse (e.g. a restart from a previous
    optimum); it must have ``config.n_pixels`` pixels.  With
    ``config.filter_sigma`` set the qubits see the Gaussian-filtered pulse
    throughout.
    """
    start = initial if initial is not None else initial_pulse(config, params)
    if start.n_pixels != config.n_pixels:
        raise ValueError(f"initial pulse has {start.n_pixels} pixels, config needs {config.n_pixels}")
    park = config.parking_for(params)
    template = ControlPulse(start.dt, start.channels, config.n_buffer, park)
    transfer = None
    if config.filter_sigma:
        transfer = GaussianTransferFunction(config.filter_sigma).fit(template.dt)
        transfer.transform(template.samples(), pad_values=park)  # validates the kernel size
    decomp = build_decomposition(params, basis=target.basis)
    objective = _Objective(template, decomp, target, transfer)
    t0 = time.perf_counter()
    x, history, gnorms, reason = bfgs(
        objective,
        objective.clip(template.channels.ravel()),
        target_error=config.target_error,
        max_iterations=config.max_iterations,
        gtol=config.gtol,
        initial_step=config.initial_step,
        callback=callback,
    )
    wall = time.perf_counter() - t0
    pulse = template.with_channels(x.reshape(2, -1))
    filtered = transfer.transform(pulse.samples(), pad_values=park) if transfer is not None else None
    log.info("GRAPE %s after %d iterations, 1-Phi = %.3e", reason, len(history) - 1, history[-1])
    return OptimizationResult(
        pulse=pulse,
        fidelity_history=[1.0 - e for e in history],
        gradient_norms=gnorms,
        termination=reason,
        wall_time=wall,
        config=config,
        filtered=filtered,
        n_evaluations=objective.n_evaluations,
    )


class CZPulseOptimizer(BaseEstimator):
    """Estimator-style front end to :func:`optimize`.

    ``fit`` takes a :class:`DeviceParams` and stores the optimized pulse in
    ``pulse_`` and the full :class:`OptimizationResult` in ``result_``.
    ``predict`` returns the gate the fitted pulse produces on a (possibly
    different) device and ``score`` its fidelity.  Constructor arguments are
    the fields of :class:`OptimizationConfig`.
    """

    def __init__(
        self,
        gate_time=35.0,
        dt=0.5,
        n_buffer=5,
        parking=None,
        target_error=1e-4,
        max_iterations=5000,
        gtol=1e-10,
        filter_sigma=None,
        initial="random",
        seed=0,
        fred=2,
        initial_detuning=None,
        initial_amplitude=None,
        initial_jitter=0.01,
        initial_step=0.01,
    ):
        self.gate_time = gate_time
        self.dt = dt
        self.n_buffer = n_buffer
        self.parking = parking
        self.target_error = target_error
        self.max_iterations = max_iterations
        self.gtol = gtol
        self.filter_sigma = filter_sigma
        self.initial = initial
        self.seed = seed
        self.fred = fred
        self.initial_detuning = initial_detuning
        self.initial_amplitude = initial_amplitude
        self.initial_jitter = initial_jitter
        self.initial_step = initial_step

    def _config(self) -> OptimizationConfig:
        return OptimizationConfig(**self.get_params())

    def fit(self, X: DeviceParams, y=None, init_pulse: Optional[ControlPulse] = None):
        if not isinstance(X, DeviceParams):
            raise TypeError(f"expected DeviceParams, got {type(X).__name__}")
        self.device_ = X
        self.result_ = optimize(self._config(), X, initial=init_pulse)
        self.pulse_ = self.result_.pulse
        self.n_iter_ = self.result_.iterations
        return self

    def predict(self, X: Optional[DeviceParams] = None) -> np.ndarray:
        check_is_fitted(self, "pulse_")
        from .dynamics import propagate

        device = self.device_ if X is None else X
        samples = None
        if self.filter_sigma:
            samples = GaussianTransferFunction(self.filter_sigma).fit(self.pulse_).transform(self.pulse_)
        return propagate(self.pulse_, device, samples=samples)

    def score(self, X: Optional[DeviceParams] = None, y=None) -> float:
        return fidelity(self.predict(X))
