"""Stationary Gaussian noise models fitted to residual spectra.

Samples follow the random Fourier series

    eta_n = M^{-1/2} sum_j f(theta_j) w_j exp(-i n theta_j),

with ``w_j`` circular complex Gaussians of unit ``E|w|^2``, whose lag-``h``
covariance is ``M^{-1} sum_j f f^* exp(-i h theta_j)``, a quadrature of
``(2 pi)^{-1} int S(theta) exp(-i h theta) dtheta``. The path is periodic with
period ``M``.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy import fft as sfft

from .core import ComplexSeries, NoiseModel
from .spectral import SpectrumEstimate, power_spectrum, resample_spectrum, spectral_factor

log = logging.getLogger(__name__)


class PeriodicNoiseWarning(UserWarning):
    pass


def default_grid(n_steps: int) -> int:
    """Smallest power of two >= 4 n_steps."""
    return 1 << int(np.ceil(np.log2(max(4 * n_steps, 8))))


def default_estimation_grid(n: int, segments: int = 64, cap: int = 4096) -> int:
    """Power-of-two segment length giving roughly ``segments`` half-overlapping segments."""
    target = max(8, int(n / (0.5 * (segments + 1))))
    return int(min(cap, 1 << int(np.floor(np.log2(target)))))


def trim_transient(residuals, p: int, minimum: int = 100):
    """Drop the first ``max(p, minimum)`` samples of a residual series."""
    v = residuals.values if isinstance(residuals, ComplexSeries) else np.asarray(residuals)
    k = max(p, minimum)
    if k >= v.shape[0]:
        raise ValueError(f"residual series of {v.shape[0]} samples shorter than the trim ({k})")
    if isinstance(residuals, ComplexSeries):
        return residuals.window(k)
    return v[k:]


def build_noise_model(residuals, M: int | None = None, real: bool | None = None,
                      overlap: float = 0.5, window: str = "hann",
                      seed: int | None = None) -> NoiseModel:
    """Noise model whose spectrum is the Welch estimate of the residuals on an ``M``-point grid.

    ``M`` is the Welch segment length (default: a power of two giving about
    64 segments); the series must hold at least ``8 M`` samples. For real
    series the spectrum is symmetrized so that ``S(-theta) = conj S(theta)``.
    """
    v = residuals.values if isinstance(residuals, ComplexSeries) else np.asarray(residuals)
    v = np.asarray(v)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    if M is None:
        M = default_estimation_grid(n)
    if n < 8 * M:
        raise ValueError(f"{n} residual samples are fewer than 8 x M = {8 * M}")
    if real is None:
        real = bool(np.all(np.asarray(v).imag == 0))
    if not np.any(v):
        return NoiseModel(np.zeros((M, v.shape[1], v.shape[1]), dtype=complex), real, seed)
    est = power_spectrum(v, seg_len=M, overlap=overlap, window=window)
    vals = est.values
    if real:
        vals = 0.5 * (vals + np.conj(vals[(-np.arange(M)) % M]))
    return NoiseModel(spectral_factor(vals), real, seed)


def refine(model: NoiseModel, M: int) -> NoiseModel:
    """The same spectrum interpolated to an ``M``-point grid and refactored."""
    if M == model.m:
        return model
    est = SpectrumEstimate(model.freqs, model.spectrum())
    vals = resample_spectrum(est, M).values
    if model.real:
        vals = 0.5 * (vals + np.conj(vals[(-np.arange(M)) % M]))
    return NoiseModel(spectral_factor(vals), model.real, model.seed)


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_paths(model: NoiseModel, n_steps: int, rng: np.random.Generator,
                 n_paths: int = 1, grid: int | None = None) -> np.ndarray:
    """Array (n_paths, n_steps, d) of noise paths.

    The spectrum is first interpolated to ``grid`` angles (default: power of
    two >= 4 n_steps) so the path's periodicity stays outside the run; a
    grid shorter than ``n_steps`` triggers a warning.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    grid = default_grid(n_steps) if grid is None else int(grid)
    if n_steps > grid:
        warnings.warn(f"{n_steps} steps exceed the {grid}-point frequency grid; the path "
                      "covariance is exactly periodic", PeriodicNoiseWarning, stacklevel=2)
    fm = refine(model, grid)
    f = fm.factors
    d = fm.d
    out = np.empty((n_paths, n_steps, d), dtype=float if model.real else complex)
    idx = np.arange(n_steps) % grid  # the path repeats with period grid
    for k in range(n_paths):
        w = _complex_normal(rng, (grid, d))
        fw = np.einsum("jab,jb->ja", f, w)
        eta = sfft.fft(fw, axis=0)[idx] / np.sqrt(grid)  # sum_j . exp(-i n theta_j)
        out[k] = np.sqrt(2.0) * eta.real if model.real else eta
    return out


def sample(model: NoiseModel, n_steps: int, rng: np.random.Generator | None = None,
           dt: float = 1.0, grid: int | None = None) -> ComplexSeries:
    """One stationary Gaussian path of length ``n_steps``."""
    if rng is None:
        rng = np.random.default_rng(model.seed)
    path = sample_paths(model, n_steps, rng, 1, grid)[0]
    return ComplexSeries(path, dt, "noise")


def covariance_oracle(model: NoiseModel, max_lag: int) -> np.ndarray:
    """Exact lag covariances of the sampler on the model's own grid, shape (max_lag+1, d, d)."""
    S = model.spectrum()
    M = model.m
    # sum_j S_j exp(-i h theta_j) is the DFT of S; lags beyond M wrap around
    C = sfft.fft(S, axis=0)[np.arange(max_lag + 1) % M] / M
    return C.real if model.real else C
