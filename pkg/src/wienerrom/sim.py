"""Reduced-model simulation: free runs, ensemble forecasts, shared-forcing runs.

All runs work in the fit's aligned coordinates: an initial segment of
``lag_depth + p + 1`` observations fixes ``x[0..p]`` (plus the predictor
history before ``x[0]``), and step ``tau`` produces ``x[p + 1 + tau]``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cascade import CascadeState, cascade_step, init_from_history
from .core import CascadeModel, ComplexSeries, InstabilityError, NoiseModel
from .noise import sample_paths

log = logging.getLogger(__name__)

DEFAULT_BOUND = 1e6


def _as_values(x):
    v = x.values if isinstance(x, ComplexSeries) else np.asarray(x)
    return np.asarray(v, dtype=complex)


def closed_loop(model: CascadeModel, init, n_steps: int, noise=None, state=None, forcing=None,
                bound: float | None = DEFAULT_BOUND) -> np.ndarray:
    """Iterate ``x[t] = w_t + noise`` with predictors evaluated on the model's own path.

    Parameters
    ----------
    init : array (L, d) or (B, L, d)
        Observations ending at aligned index ``p``; the last
        ``lag_depth + p + 1`` are used.
    noise : array (n_steps, d) or (B, n_steps, d), optional
        Added at every step (zero when omitted).
    state : array (p, d) or (B, p, d), optional
        Cascade state at ``t = p``; by default the state reproducing ``x[1..p]``.
    forcing : array (N_F, d), optional
        Aggregated forcing in aligned coordinates (index 0 = ``x[0]``) for
        shared-forcing models.
    bound : float or None
        Abort when ``|x|`` exceeds ``bound`` times the initial-data scale.

    Returns
    -------
    array (p + 1 + n_steps, d) or (B, p + 1 + n_steps, d)
        The path in aligned coordinates, including ``x[0..p]``.
    """
    basis = model.basis
    depth = basis.lag_depth
    p, r = model.p, model.r
    init = _as_values(init)
    batched = init.ndim == 3
    if not batched:
        init = init[None]
    B, L, d = init.shape
    need = depth + p + 1
    if L < need:
        raise ValueError(f"initial segment of {L} states too short; need {need}")
    if d != model.state_dim:
        raise ValueError(f"initial data dimension {d} != model state dimension {model.state_dim}")
    init = init[:, L - need:]
    n_total = p + 1 + n_steps
    x = np.zeros((B, depth + n_total, d), dtype=complex)
    x[:, :need] = init
    if noise is not None:
        noise = _as_values(noise)
        if noise.ndim == 2:
            noise = np.broadcast_to(noise, (B,) + noise.shape)
        if noise.shape[1] < n_steps:
            raise ValueError(f"noise covers {noise.shape[1]} of {n_steps} steps")
    F = None
    q = model.forcing_order
    if q is not None:
        if forcing is None:
            raise ValueError("shared-forcing model needs the aggregated forcing series")
        F = _as_values(forcing)
        if F.shape[0] < p + n_steps + q:
            raise ValueError(f"forcing series of {F.shape[0]} samples too short; need "
                             f"{p + n_steps + q}")
        cw = model.forcing_weights
    if state is None:
        st = init_from_history(model.cascade, np.moveaxis(x[:, depth + 1:depth + p + 1], 1, 0))
    else:
        z = np.asarray(state, dtype=complex)
        z = np.moveaxis(z, 1, 0) if z.ndim == 3 else np.broadcast_to(z[:, None], (p, B, d))
        st = CascadeState(np.array(z))
    cols = basis.columns()
    bw = [model.weights[j][cols] for j in range(r + 1)]  # (d, q_row) each
    psi = deque(maxlen=r + 1)
    for n in range(r + 1):  # Psi[0..r] from the initial segment
        psi.append(basis.evaluate(x[:, n:n + depth + 1]))
    scale = max(float(np.abs(init).max()), 1e-300)
    limit = None if bound is None else bound * scale
    for tau in range(n_steps):
        t = p + 1 + tau
        u = sum(np.einsum("bkc,kc->bk", psi[j], bw[j]) for j in range(r + 1))
        if F is not None:
            for i in range(q + 1):
                u = u + cw[i] * F[t - 1 + i]
        st, w = cascade_step(st, model.cascade, u)
        xt = w if noise is None else w + noise[:, tau]
        x[:, depth + t] = xt
        if limit is not None and not np.all(np.abs(xt) <= limit):
            raise InstabilityError("reduced model exceeded the instability bound", tau)
        nxt = t - p + r  # Psi index needed at the next step
        if nxt <= t:
            psi.append(basis.evaluate(x[:, nxt:nxt + depth + 1]))
    out = x[:, depth:]
    return out if batched else out[0]


def simulate(model: CascadeModel, noise: NoiseModel | None, init, n_steps: int,
             rng: np.random.Generator | None = None, forcing=None, state=None,
             dt: float = 1.0, bound: float | None = DEFAULT_BOUND) -> ComplexSeries:
    """Free run with sampled noise; returns the ``n_steps`` generated states."""
    rng = np.random.default_rng() if rng is None else rng
    xi = None
    if noise is not None:
        xi = sample_paths(noise, n_steps, rng, 1)[0]
    path = closed_loop(model, init, n_steps, xi, state=state, forcing=forcing, bound=bound)
    return ComplexSeries(path[model.p + 1:], dt, "reduced")


def simulate_shared_forcing(model: CascadeModel, noise: NoiseModel | None, init, forcing_agg,
                            n_steps: int, rng: np.random.Generator | None = None,
                            c_weights: np.ndarray | None = None, dt: float = 1.0,
                            bound: float | None = DEFAULT_BOUND) -> ComplexSeries:
    """Free run driven by a recorded aggregated forcing in addition to sampled noise.

    ``forcing_agg`` is aligned with ``init`` (its index 0 is the first state
    of the aligned initial segment). ``c_weights`` overrides the fitted
    forcing weights, e.g. zero weights reduce to :func:`simulate`.
    """
    from dataclasses import replace

    if c_weights is not None:
        model = replace(model, forcing_weights=np.asarray(c_weights, dtype=complex))
    if model.forcing_weights is None:
        raise ValueError("model has no forcing weights")
    return simulate(model, noise, init, n_steps, rng, forcing=_as_values(forcing_agg), dt=dt,
                    bound=bound)


@dataclass
class EnsembleForecast:
    """Members (pieces, members, horizon, d) with mean and 5/95 percent bands of Re and Im."""

    members: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray

    @property
    def band_width(self) -> np.ndarray:
        return (self.q95 - self.q05).real


def ensemble_forecast(model: CascadeModel, noise: NoiseModel | None, init_data, n_ens: int,
                      horizon: int, rng: np.random.Generator | None = None, forcing=None,
                      keep_members: bool = True, bound: float | None = DEFAULT_BOUND
                      ) -> EnsembleForecast:
    """Ensemble forecasts from exact data initial segments.

    ``init_data`` is one segment (L, d) or a stack of pieces (P, L, d); every
    member of a piece starts from the same segment and differs only through
    its independent noise path.
    """
    if n_ens < 1:
        raise ValueError("n_ens must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    init = _as_values(init_data)
    single = init.ndim == 2
    if single:
        init = init[None]
    P = init.shape[0]
    batch = np.repeat(init, n_ens, axis=0)
    xi = None
    if noise is not None:
        xi = sample_paths(noise, horizon, rng, P * n_ens)
    F = None if forcing is None else _as_values(forcing)
    if F is not None and F.ndim == 3:
        raise ValueError("per-piece forcing is not supported; forecast pieces one at a time")
    path = closed_loop(model, batch, horizon, xi, forcing=F, bound=bound)
    mem = path[:, model.p + 1:].reshape(P, n_ens, horizon, -1)
    mean = mem.mean(axis=1)
    q05 = np.quantile(mem.real, 0.05, axis=1) + 1j * np.quantile(mem.imag, 0.05, axis=1)
    q95 = np.quantile(mem.real, 0.95, axis=1) + 1j * np.quantile(mem.imag, 0.95, axis=1)
    fc = EnsembleForecast(mem if keep_members else mem[:, :0], mean, q05, q95)
    if single:
        fc = EnsembleForecast(fc.members[0], fc.mean[0], fc.q05[0], fc.q95[0])
    return fc
