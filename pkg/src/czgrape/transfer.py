"""Gaussian transfer function between waveform generator and qubit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dynamics import ControlPulse

# kernel half-width in units of sigma
TRUNCATE = 5.0
MAX_SUPPORT_RATIO = 10.0


def gaussian_kernel(sigma: float, dt: float) -> np.ndarray:
    """Sampled Gaussian of standard deviation ``sigma`` (ns), normalized to unit sum."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.ones(1)
    half = max(1, int(np.ceil(TRUNCATE * sigma / dt)))
    t = dt * np.arange(-half, half + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def sigma_for_cutoff(f3db: float) -> float:
    """Width (ns) of the Gaussian whose amplitude response is 1/sqrt(2) at ``f3db`` GHz."""
    return np.sqrt(np.log(2.0)) / (2.0 * np.pi * f3db)


def cutoff_for_sigma(sigma: float) -> float:
    return np.sqrt(np.log(2.0)) / (2.0 * np.pi * sigma)


def kernel_response(kernel: np.ndarray, dt: float, freqs) -> np.ndarray:
    """Amplitude response of a symmetric discrete kernel at ``freqs`` (GHz)."""
    half = len(kernel) // 2
    t = dt * np.arange(-half, half + 1)
    return np.abs(np.exp(-2j * np.pi * np.outer(freqs, t)) @ kernel)


class GaussianTransferFunction(TransformerMixin, BaseEstimator):
    """Convolve detuning samples with a unit-gain Gaussian.

    ``fit`` takes the pixel duration (or a :class:`ControlPulse`) and builds
    the kernel.  ``transform`` maps samples of shape ``(2, n)`` to samples of
    the same shape, padding each channel with its parking value beyond the
    ends.  ``adjoint`` back-propagates a gradient with respect to the
    filtered samples onto the unfiltered ones.

    Parameters
    ----------
    sigma : float
        Standard deviation of the impulse response in ns.  ``0`` disables
        filtering.
    """

    def __init__(self, sigma: float = 0.0):
        self.sigma = sigma

    def fit(self, X, y=None):
        dt = X.dt if isinstance(X, ControlPulse) else float(X)
        if not dt > 0:
            raise ValueError("pixel duration must be positive")
        self.dt_ = dt
        self.kernel_ = gaussian_kernel(self.sigma, dt)
        self.half_width_ = len(self.kernel_) // 2
        return self

    def _check_length(self, n):
        if len(self.kernel_) > MAX_SUPPORT_RATIO * n:
            raise ValueError(
                f"filter support of {len(self.kernel_)} pixels exceeds "
                f"{MAX_SUPPORT_RATIO:g}x the pulse length ({n} pixels)"
            )

    def transform(self, X, pad_values=None):
        """Filtered copy of samples ``X`` (shape ``(2, n)``) or of a pulse."""
        check_is_fitted(self, "kernel_")
        if isinstance(X, ControlPulse):
            if pad_values is None:
                pad_values = X.buffer_values
            self._check_dt(X.dt)
            X = X.samples()
        x = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_length(x.shape[1])
        if pad_values is None:
            pad_values = x[:, 0]
        h = self.half_width_
        out = np.empty_like(x)
        for k in range(x.shape[0]):
            padded = np.concatenate([np.full(h, pad_values[k]), x[k], np.full(h, pad_values[k])])
            out[k] = np.convolve(padded, self.kernel_, mode="valid")
        return out

    def adjoint(self, grad, dt=None):
        """Gradient with respect to the raw samples given one w.r.t. the filtered samples."""
        check_is_fitted(self, "kernel_")
        if dt is not None:
            self._check_dt(dt)
        g = np.atleast_2d(np.asarray(grad, dtype=float))
        self._check_length(g.shape[1])
        # correlation with the kernel; the padding is constant so it carries no gradient
        flipped = self.kernel_[::-1]
        zeros = np.zeros(self.half_width_)
        return np.stack(
            [np.convolve(np.concatenate([zeros, row, zeros]), flipped, mode="valid") for row in g]
        )

    def _check_dt(self, dt):
        if not np.isclose(dt, self.dt_, rtol=1e-12, atol=0):
            raise ValueError(f"filter was built for dt={self.dt_} ns, got dt={dt} ns")


def apply_transfer_function(pulse: ControlPulse, sigma: float) -> np.ndarray:
    """Samples the qubits see after the Gaussian filter, shape ``(2, pulse.n_total)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return GaussianTransferFunction(sigma).fit(pulse).transform(pulse)


def chain_rule_gradient(filtered_gradient, sigma: float, dt: float) -> np.ndarray:
    """Map a gradient w.r.t. filtered samples back to the raw samples."""
    return GaussianTransferFunction(sigma).fit(dt).adjoint(filtered_gradient, dt)
