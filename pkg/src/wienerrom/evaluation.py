"""Comparison statistics and forecast-skill metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import CascadeModel, ComplexSeries
from .spectral import acf, ccf, power_spectrum

log = logging.getLogger(__name__)


def _values(u) -> np.ndarray:
    v = u.values if isinstance(u, ComplexSeries) else np.asarray(u)
    v = np.asarray(v)
    return v[:, None] if v.ndim == 1 else v


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class EnergySpectrum:
    mean: np.ndarray
    stderr: np.ndarray


def energy_spectrum(u, n_blocks: int = 20) -> EnergySpectrum:
    """Per-mode ``<|u_k|^2>`` with delete-one-block jackknife standard errors.

    Contiguous blocks keep the error estimate honest for correlated series.
    """
    v = _values(u)
    e = np.abs(v) ** 2
    mean = e.mean(axis=0)
    n = e.shape[0]
    nb = int(min(n_blocks, n))
    if nb < 2:
        return EnergySpectrum(mean, np.full_like(mean, np.nan))
    edges = np.linspace(0, n, nb + 1).astype(int)
    sums = np.array([e[a:b].sum(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    counts = np.diff(edges)[:, None]
    loo = (sums.sum(axis=0) - sums) / (n - counts)
    se = np.sqrt((nb - 1) / nb * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return EnergySpectrum(mean, se)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def marginal_density(u, component: int = 0, n_bins: int = 50, range_=None,
                     part: str = "real") -> Histogram:
    """Normalized histogram of the real (or imaginary) part of one component."""
    if n_bins < 10:
        raise ValueError("n_bins must be >= 10")
    v = _values(u)[:, component]
    v = v.real if part == "real" else v.imag
    lo, hi = (float(v.min()), float(v.max())) if range_ is None else range_
    if hi <= lo:
        hi = lo + 1.0
        lo = lo - 0.0
    counts, edges = np.histogram(v, bins=n_bins, range=(lo, hi))
    width = np.diff(edges)
    n = counts.sum()
    dens = counts / (n * width)
    err = np.sqrt(counts) / (n * width)
    return Histogram(edges, dens, err)


def normalized_acf(u, max_lag: int, part: str = "real") -> np.ndarray:
    """Autocorrelation of the real parts of each component, shape (max_lag+1, d)."""
    v = _values(u)
    v = v.real if part == "real" else v.imag
    c = acf(v.astype(complex), max_lag)
    diag = np.real(np.diagonal(c, axis1=1, axis2=2))
    return diag / diag[0]


def energy_ccf(u, max_lag: int) -> np.ndarray:
    """Correlation of mode energies ``|u_k|^2`` across modes, (2L+1, d, d)."""
    e = np.abs(_values(u)) ** 2
    c = ccf(e.astype(complex), e.astype(complex), max_lag).real
    sd = np.sqrt(np.diag(c[max_lag]))
    return c / np.outer(sd, sd)


# ---------------------------------------------------------------- forecast skill

def _pieces(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    return a


def rmse(truth_pieces, ensemble_means) -> np.ndarray:
    """``RMSE(tau_n) = sqrt(mean_i |Re v_i(n) - Re ubar_i(n)|^2)`` with the norm over modes."""
    v, u = _pieces(truth_pieces), _pieces(ensemble_means)
    if v.shape != u.shape:
        raise ValueError(f"piece shapes differ: {v.shape} vs {u.shape}")
    err = np.sum((v.real - u.real) ** 2, axis=2)
    return np.sqrt(err.mean(axis=0))


def rmse_imag(truth_pieces, ensemble_means) -> np.ndarray:
    v, u = _pieces(truth_pieces), _pieces(ensemble_means)
    if v.shape != u.shape:
        raise ValueError(f"piece shapes differ: {v.shape} vs {u.shape}")
    return np.sqrt(np.sum((v.imag - u.imag) ** 2, axis=2).mean(axis=0))


@dataclass(frozen=True)
class ANCRResult:
    curve: np.ndarray
    skipped: np.ndarray  # per lead time, pieces with a zero anomaly


def ancr(truth_pieces, ensemble_means, climatology, tol: float = 0.0) -> ANCRResult:
    """Anomaly correlation of ensemble means against the truth, averaged over pieces.

    Pieces whose truth or forecast anomaly vanishes are skipped and counted.
    """
    v, u = _pieces(truth_pieces), _pieces(ensemble_means)
    if v.shape != u.shape:
        raise ValueError(f"piece shapes differ: {v.shape} vs {u.shape}")
    clim = np.asarray(climatology).real
    av = v.real - clim
    au = u.real - clim
    num = np.sum(av * au, axis=2)
    den = np.sqrt(np.sum(av ** 2, axis=2) * np.sum(au ** 2, axis=2))
    ok = den > tol
    corr = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    n_ok = ok.sum(axis=0)
    curve = np.where(n_ok > 0, corr.sum(axis=0) / np.maximum(n_ok, 1), np.nan)
    return ANCRResult(curve, (~ok).sum(axis=0))


def climatological_rmse(truth_pieces, climatology) -> np.ndarray:
    v = _pieces(truth_pieces)
    return rmse(v, np.broadcast_to(np.asarray(climatology), v.shape))


def efolding_lag(u, max_lag: int | None = None) -> int:
    """Smallest lag at which every component's real-part ACF drops below 1/e."""
    v = _values(u)
    max_lag = min(v.shape[0] - 1, max_lag or v.shape[0] // 4)
    r = normalized_acf(v, max_lag)
    below = r < np.exp(-1)
    lags = [int(np.argmax(below[:, k])) if below[:, k].any() else max_lag for k in range(r.shape[1])]
    return max(1, max(lags))


def piece_starts(n_total: int, horizon: int, init_len: int, gap: int,
                 n_pieces: int | None = None, offset: int = 0) -> np.ndarray:
    """Start indices of forecast pieces spaced by ``gap`` that fit within the series."""
    last = n_total - horizon - init_len
    starts = np.arange(offset, last + 1, max(gap, 1))
    return starts if n_pieces is None else starts[:n_pieces]


# ---------------------------------------------------------------- spectral identity

def transfer_function(model: CascadeModel, thetas: np.ndarray, columns: np.ndarray) -> np.ndarray:
    """``H(exp(-i theta))`` from the flattened compact predictor to the state, (M, d, d q_row).

    The prediction obeys ``A(D) w_t = sum_j D^{1+p-j} L_j P_t`` in the delay
    operator ``D``; on the unit circle ``D = exp(i theta)``.
    """
    d, q = columns.shape
    p, r = model.p, model.r
    D = np.exp(1j * thetas)
    a = model.a()
    A = np.ones_like(D)
    for i in range(p):
        A = A + a[i] * D ** (p - i)
    if np.any(np.abs(A) < 1e-12):
        raise ValueError("A vanishes on the unit circle")
    H = np.zeros((thetas.size, d, d * q), dtype=complex)
    for j in range(r + 1):
        Lj = np.zeros((d, d * q), dtype=complex)
        bj = model.weights[j][columns]
        for k in range(d):
            Lj[k, k * q:(k + 1) * q] = bj[k]
        H += (D ** (1 + p - j))[:, None, None] * Lj
    return H / A[:, None, None]


@dataclass
class ConsistencyResult:
    defect: np.ndarray          # (M, d, d)
    relative: float             # band-averaged ||defect|| / ||S_xx||
    band_relative: np.ndarray   # per-band ratios


def spectral_consistency(model: CascadeModel, S_xx, S_PP, S_Pxi, S_xixi, columns: np.ndarray,
                         n_bands: int = 8) -> ConsistencyResult:
    """Defect ``S_xx - [H S_PP H^* + H S_Pxi + S_xiP H^* + S_xixi]`` on a common grid."""
    def arr(s):
        return s.values if hasattr(s, "values") else np.asarray(s)
    Sxx, SPP, SPx, Sxi = arr(S_xx), arr(S_PP), arr(S_Pxi), arr(S_xixi)
    M = Sxx.shape[0]
    thetas = 2 * np.pi * np.arange(M) / M
    H = transfer_function(model, thetas, columns)
    Hh = np.conj(np.swapaxes(H, 1, 2))
    SxP = np.conj(np.swapaxes(SPx, 1, 2))
    model_s = H @ SPP @ Hh + H @ SPx + SxP @ Hh + Sxi
    defect = Sxx - model_s
    num = np.linalg.norm(defect, axis=(1, 2))
    den = np.linalg.norm(Sxx, axis=(1, 2))
    bands = np.array_split(np.arange(M), n_bands)
    band_rel = np.array([num[b].mean() / max(den[b].mean(), 1e-300) for b in bands])
    return ConsistencyResult(defect, float(num.mean() / max(den.mean(), 1e-300)), band_rel)


def consistency_from_data(model: CascadeModel, x, psi, residuals, residual_start: int,
                          seg_len: int = 256) -> ConsistencyResult:
    """Estimate every spectrum from one aligned window of data and check the identity."""
    X = _values(x)
    R = _values(residuals)
    n = R.shape[0]
    t0 = residual_start
    xs = X[t0:t0 + n]
    P = psi.values[t0 - psi.start:t0 - psi.start + n].reshape(n, -1)
    d = xs.shape[1]
    joint = np.concatenate([xs, P, R], axis=1)
    S = power_spectrum(joint, seg_len=seg_len).values
    dp = P.shape[1]
    ix, ip, ir = slice(0, d), slice(d, d + dp), slice(d + dp, d + dp + d)
    return spectral_consistency(model, S[:, ix, ix], S[:, ip, ip], S[:, ip, ir], S[:, ir, ir],
                                psi.columns)


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    """Side-by-side statistics of two runs; tables are plot-ready arrays."""

    labels: tuple
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def compare_runs(a, b, which=("acf", "ccf", "marginal", "spectrum", "powerspec"),
                 max_lag: int = 100, n_bins: int = 50, labels=("A", "B"),
                 seg_len: int | None = None) -> EvalReport:
    """Compute the requested statistics for both runs with defects between them."""
    va, vb = _values(a), _values(b)
    if va.shape[1] != vb.shape[1]:
        raise ValueError(f"dimension mismatch: {labels[0]} has d={va.shape[1]}, "
                         f"{labels[1]} has d={vb.shape[1]}")
    da = a.dt if isinstance(a, ComplexSeries) else None
    db = b.dt if isinstance(b, ComplexSeries) else None
    if da is not None and db is not None and not np.isclose(da, db):
        raise ValueError(f"sampling intervals differ: {da} vs {db}")
    d = va.shape[1]
    rep = EvalReport(tuple(labels))
    max_lag = int(min(max_lag, va.shape[0] - 1, vb.shape[0] - 1))
    for what in which:
        if what == "acf":
            ra, rb = normalized_acf(va, max_lag), normalized_acf(vb, max_lag)
            rep.tables["acf"] = {"lag": np.arange(max_lag + 1), "a": ra, "b": rb}
            rep.summary["acf_max_abs_diff"] = float(np.abs(ra - rb).max())
        elif what == "ccf":
            ca, cb = energy_ccf(va, max_lag), energy_ccf(vb, max_lag)
            rep.tables["ccf"] = {"lag": np.arange(-max_lag, max_lag + 1), "a": ca, "b": cb}
            rep.summary["ccf_max_abs_diff"] = float(np.abs(ca - cb).max())
        elif what == "marginal":
            tabs, diffs = [], []
            for k in range(d):
                lo = float(min(va[:, k].real.min(), vb[:, k].real.min()))
                hi = float(max(va[:, k].real.max(), vb[:, k].real.max()))
                ha = marginal_density(va, k, n_bins, (lo, hi))
                hb = marginal_density(vb, k, n_bins, (lo, hi))
                tabs.append((ha, hb))
                diffs.append(float(np.sum(np.abs(ha.density - hb.density) * np.diff(ha.edges))))
            rep.tables["marginal"] = tabs
            rep.summary["marginal_l1"] = diffs
        elif what == "spectrum":
            ea, eb = energy_spectrum(va), energy_spectrum(vb)
            rep.tables["spectrum"] = {"a": ea, "b": eb}
            rep.summary["spectrum_rel_diff"] = (np.abs(eb.mean - ea.mean) /
                                                np.maximum(ea.mean, 1e-300)).tolist()
        elif what == "powerspec":
            kw = {} if seg_len is None else {"seg_len": seg_len}
            sa = power_spectrum(va, **kw)
            sb = power_spectrum(vb, **kw) if seg_len is not None else \
                power_spectrum(vb, seg_len=sa.meta["seg_len"])
            rep.tables["powerspec"] = {"freqs": sa.freqs, "a": sa.diagonal(), "b": sb.diagonal()}
            rep.summary["powerspec_rel_diff"] = band_relative_difference(sa.trace(), sb.trace())
        else:
            raise ValueError(f"unknown statistic {what!r}")
    return rep


def band_relative_difference(sa: np.ndarray, sb: np.ndarray, n_bands: int = 8) -> float:
    """Largest relative difference between band averages of two spectra."""
    bands = np.array_split(np.arange(sa.size), n_bands)
    rel = [abs(sa[b].mean() - sb[b].mean()) / max(abs(sa[b].mean()), 1e-300) for b in bands]
    return float(max(rel))


def relative_l2_error(truth, approx) -> float:
    """``sqrt(sum |e|^2 / sum |truth|^2)`` over a window."""
    t, a = np.asarray(truth), np.asarray(approx)
    return float(np.sqrt(np.sum(np.abs(t - a) ** 2) / np.sum(np.abs(t) ** 2)))
