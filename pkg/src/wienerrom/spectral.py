"""Covariance functions and matrix power spectra of stationary series.

Conventions: ``C_uv(k) = cov(u_{n+k}, conj(v_n))`` and
``S_uv(theta) = sum_k C_uv(k) exp(i k theta)`` on angles ``theta in [0, 2 pi)``.
With these, ``C(k) = (1/2pi) int S(theta) exp(-i k theta) dtheta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft
from scipy.signal import get_window

from .core import ComplexSeries

CLIP_RELATIVE = 1e-12


@dataclass(frozen=True)
class SpectrumEstimate:
    """Matrix spectrum ``values[j]`` (d x d) at angle ``freqs[j]``."""

    freqs: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def trace(self) -> np.ndarray:
        return np.real(np.trace(self.values, axis1=1, axis2=2))

    def diagonal(self) -> np.ndarray:
        """Auto-spectra of each component, shape (M, d)."""
        return np.real(np.diagonal(self.values, axis1=1, axis2=2))


def _as_array(u) -> np.ndarray:
    v = u.values if isinstance(u, ComplexSeries) else np.asarray(u)
    if v.ndim == 1:
        v = v[:, None]
    return v.astype(complex)


def _lagged_products(x: np.ndarray, y: np.ndarray, max_lag: int) -> np.ndarray:
    """Raw sums ``sum_n x[n+k] conj(y[n])`` for k = -max_lag..max_lag, shape (2L+1, dx, dy)."""
    n = x.shape[0]
    nfft = sfft.next_fast_len(n + max_lag + 1)
    fx = sfft.fft(x, nfft, axis=0)
    fy = sfft.fft(y, nfft, axis=0)
    raw = sfft.ifft(fx[:, :, None] * np.conj(fy[:, None, :]), axis=0)
    idx = np.arange(-max_lag, max_lag + 1) % nfft
    return raw[idx]


def acf(u, max_lag: int) -> np.ndarray:
    """Autocovariance matrices ``C_uu(0..max_lag)``, shape (max_lag+1, d, d).

    The sample mean is removed and lag ``k`` is normalized by ``N - k``.
    """
    x = _as_array(u)
    n = x.shape[0]
    if max_lag < 0 or max_lag >= n:
        raise ValueError(f"max_lag must be in [0, N), got {max_lag} with N={n}")
    x = x - x.mean(axis=0)
    raw = _lagged_products(x, x, max_lag)[max_lag:]
    return raw / (n - np.arange(max_lag + 1))[:, None, None]


def ccf(u, v, max_lag: int) -> np.ndarray:
    """Two-sided cross-covariance ``C_uv(-max_lag..max_lag)``, shape (2L+1, du, dv)."""
    x, y = _as_array(u), _as_array(v)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"series lengths differ: {x.shape[0]} vs {y.shape[0]}")
    if isinstance(u, ComplexSeries) and isinstance(v, ComplexSeries) and u.dt != v.dt:
        raise ValueError(f"sampling intervals differ: {u.dt} vs {v.dt}")
    n = x.shape[0]
    if max_lag < 0 or max_lag >= n:
        raise ValueError(f"max_lag must be in [0, N), got {max_lag} with N={n}")
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    raw = _lagged_products(x, y, max_lag)
    counts = n - np.abs(np.arange(-max_lag, max_lag + 1))
    return raw / counts[:, None, None]


def segment_length(n: int, segments: int, overlap: float) -> int:
    step_frac = 1.0 - overlap
    return int(n / (1.0 + (segments - 1) * step_frac))


def power_spectrum(u, segments: int = 64, overlap: float = 0.5, window: str = "hann",
                   seg_len: int | None = None) -> SpectrumEstimate:
    """Welch-averaged matrix periodogram of a mean-removed series.

    Either ``segments`` (count, the default route) or an explicit ``seg_len``
    fixes the segment length; successive segments overlap by ``overlap``.
    """
    x = _as_array(u)
    n = x.shape[0]
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    if seg_len is None:
        seg_len = segment_length(n, max(int(segments), 1), overlap)
    if seg_len < 8:
        raise ValueError(f"segment length {seg_len} < 8; series too short ({n} samples)")
    if seg_len > n:
        raise ValueError(f"series of {n} samples shorter than one segment ({seg_len})")
    step = max(1, int(round(seg_len * (1.0 - overlap))))
    x = x - x.mean(axis=0)
    win = get_window(window, seg_len, fftbins=True)
    segs = sliding_window_view(x, seg_len, axis=0)[::step]  # (K, d, L)
    segs = segs * win
    # sum_n x_n exp(+i n theta_j) == L * ifft
    spec = sfft.ifft(segs, axis=-1) * seg_len
    vals = np.einsum("kaj,kbj->jab", spec, np.conj(spec)) / (segs.shape[0] * np.sum(win ** 2))
    vals = 0.5 * (vals + np.conj(np.swapaxes(vals, 1, 2)))
    freqs = 2 * np.pi * np.arange(seg_len) / seg_len
    meta = {"seg_len": seg_len, "overlap": overlap, "window": window,
            "segments": int(segs.shape[0])}
    return SpectrumEstimate(freqs, vals, meta)


def resample_spectrum(s: SpectrumEstimate, m: int) -> SpectrumEstimate:
    """Periodic linear interpolation onto ``m`` equispaced angles (preserves PSD-ness)."""
    if m == s.m:
        return s
    src = s.values
    pos = np.arange(m) * (s.m / m)
    lo = np.floor(pos).astype(int)
    w = (pos - lo)[:, None, None]
    vals = (1 - w) * src[lo % s.m] + w * src[(lo + 1) % s.m]
    meta = dict(s.meta, resampled_from=s.m)
    return SpectrumEstimate(2 * np.pi * np.arange(m) / m, vals, meta)


def spectral_factor(s) -> np.ndarray:
    """Hermitian square roots ``f`` with ``f f* = S`` at every angle, shape (M, d, d).

    Each ``S(theta_j)`` is symmetrized and eigenvalues below
    ``1e-12 * max eigenvalue`` are clipped to zero first.
    """
    vals = s.values if isinstance(s, SpectrumEstimate) else np.asarray(s)
    vals = np.asarray(vals, dtype=complex)
    if vals.ndim == 1:
        vals = vals[:, None, None]
    if not np.all(np.isfinite(vals)):
        raise ValueError("spectrum contains non-finite entries")
    herm = 0.5 * (vals + np.conj(np.swapaxes(vals, 1, 2)))
    lam, vec = np.linalg.eigh(herm)
    top = np.max(lam, axis=1, keepdims=True)
    lam = np.where(lam < CLIP_RELATIVE * np.maximum(top, 0.0), 0.0, lam)
    return vec * np.sqrt(lam)[:, None, :]


def clipped_spectrum(s) -> np.ndarray:
    """The PSD matrices actually factored by :func:`spectral_factor`."""
    f = spectral_factor(s)
    return f @ np.conj(np.swapaxes(f, 1, 2))


def filter_response(h: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Transfer function ``H(z) = sum_n h_n z^-n`` at ``z = exp(-i theta)`` for FIR taps ``h``.

    With this, the output of ``y = h * x`` has spectrum ``H S_xx H^*``.
    """
    h = np.asarray(h)
    n = np.arange(h.shape[0])
    phase = np.exp(1j * np.outer(thetas, n))
    return np.tensordot(phase, h, axes=(1, 0))
