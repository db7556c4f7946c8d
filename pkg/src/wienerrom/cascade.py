"""Second-order cascade filter engine.

The filter ``1/A(z)`` runs as a chain of stages. An optional linear stage
``z + alpha_0`` comes first, then quadratic stages ``z^2 + alpha_i z + beta_i``;
stage ``i`` obeys ``z_i[n] + alpha_i z_i[n-1] + beta_i z_i[n-2] = z_{i-1}[n]``
with the stage-1 input supplied by the caller and the model output equal to
the last stage.

State layout: a :class:`CascadeState` holds the array ``z`` of shape
``(p, ...)`` whose slots are ``[z_0[n]]`` for the linear stage, followed by
``z_i[n], z_i[n-1]`` for each quadratic stage in chain order. Trailing
dimensions (state components, predictor columns, batch members) are carried
along unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .core import (CascadeCoefficients, ComplexSeries, InstabilityError, ModelOrders,
                   cascade_roots)

DEFAULT_BOUND_FACTOR = 1e6


@dataclass
class CascadeState:
    """Stage histories at the current time, slots as described in the module docstring."""

    z: np.ndarray

    @classmethod
    def zeros(cls, coeffs: CascadeCoefficients, tail=()) -> "CascadeState":
        tail = (tail,) if isinstance(tail, (int, np.integer)) else tuple(tail)
        return cls(np.zeros((coeffs.p,) + tail, dtype=complex))

    @property
    def p(self) -> int:
        return self.z.shape[0]

    def output(self, coeffs: CascadeCoefficients) -> np.ndarray:
        """Current last-stage value (the newest model output)."""
        if coeffs.n_stages:
            return self.z[self.p - 2]
        return self.z[0]

    def copy(self) -> "CascadeState":
        return CascadeState(self.z.copy())


def _slot_of_stage(coeffs: CascadeCoefficients, i: int) -> int:
    return int(coeffs.linear is not None) + 2 * i


def cascade_step(state: CascadeState, coeffs: CascadeCoefficients, stage1_input: np.ndarray):
    """Advance every stage by one step; returns ``(new_state, y)``.

    ``stage1_input`` is the predictor term ``sum_j Psi . b_j`` for this step.
    """
    if state.p != coeffs.p:
        raise ValueError(f"state has {state.p} slots, coefficients need {coeffs.p}")
    z = state.z.copy()
    x = np.asarray(stage1_input)
    if coeffs.linear is not None:
        x = x - coeffs.linear * z[0]
        z[0] = x
    for i, (alpha, beta) in enumerate(coeffs.pairs):
        s = _slot_of_stage(coeffs, i)
        x = x - alpha * z[s] - beta * z[s + 1]
        z[s + 1] = z[s]
        z[s] = x
    if coeffs.p == 0:
        return CascadeState(z), np.array(x, dtype=complex)
    return CascadeState(z), x


def run_cascade(coeffs: CascadeCoefficients, inputs: np.ndarray,
                state: CascadeState | None = None):
    """Filter a whole input sequence (time on axis 0); returns ``(outputs, final_state)``.

    Each stage is one :func:`scipy.signal.lfilter` pass with initial
    conditions taken from ``state`` (zero state when omitted).
    """
    x = np.asarray(inputs, dtype=complex)
    T = x.shape[0]
    tail = x.shape[1:]
    z0 = np.zeros((coeffs.p,) + tail, dtype=complex) if state is None else \
        np.broadcast_to(state.z, (coeffs.p,) + tail)
    zf = np.empty_like(z0)
    if coeffs.linear is not None:
        a0 = coeffs.linear
        x = lfilter([1.0], [1.0, a0], x, axis=0, zi=(-a0 * z0[0])[None])[0] if T else x
        zf[0] = x[-1] if T else z0[0]
    for i, (alpha, beta) in enumerate(coeffs.pairs):
        s = _slot_of_stage(coeffs, i)
        cur, prev = z0[s], z0[s + 1]
        if T:
            zi = np.stack([-alpha * cur - beta * prev, -beta * cur])
            x = lfilter([1.0], [1.0, alpha, beta], x, axis=0, zi=zi)[0]
        hist = np.concatenate([prev[None], cur[None], x], axis=0)
        zf[s], zf[s + 1] = hist[-1], hist[-2]
    return x, CascadeState(zf)


def matrix_cascade(coeffs: CascadeCoefficients, psi) -> np.ndarray:
    """Cascade run from rest with predictor matrices as stage-1 input (identity weight).

    ``psi`` may be a :class:`~wienerrom.predictors.PredictorSeries` (its
    compact values are filtered) or any array with time on axis 0.
    Post-multiplying lag-shifted outputs by the weights gives the zero-state
    part of the one-step predictions, since filtering commutes with the
    weight products.
    """
    vals = psi.values if hasattr(psi, "values") else np.asarray(psi)
    return run_cascade(coeffs, vals)[0]


def init_from_history(coeffs: CascadeCoefficients, y: np.ndarray) -> CascadeState:
    """State whose last-stage history equals ``y`` (oldest first, length >= p).

    Back-substitutes through the chain: the last stage's state is read off
    ``y``, its input sequence follows from the stage recursion, and so on
    toward stage 1. Only the last ``p`` entries of ``y`` are used, and zero
    data gives the zero state.
    """
    y = np.asarray(y, dtype=complex)
    p = coeffs.p
    if y.ndim == 0 or y.shape[0] < p:
        raise ValueError(f"need at least p={p} history values, got {0 if y.ndim == 0 else y.shape[0]}")
    z = np.zeros((p,) + y.shape[1:], dtype=complex)
    if p == 0:
        return CascadeState(z)
    seq = y[y.shape[0] - p:]
    for i in range(coeffs.n_stages - 1, -1, -1):
        alpha, beta = coeffs.pairs[i]
        s = _slot_of_stage(coeffs, i)
        z[s], z[s + 1] = seq[-1], seq[-2]
        seq = seq[2:] + alpha * seq[1:-1] + beta * seq[:-2]
    if coeffs.linear is not None:
        z[0] = seq[-1]
    return CascadeState(z)


def zero_input_basis(coeffs: CascadeCoefficients, horizon: int) -> np.ndarray:
    """Output sequences for unit perturbations of each state slot, zero input; shape (p, horizon).

    Entry ``[h, n]`` is the output ``n + 1`` steps after the state; any
    initial state ``z`` contributes ``sum_h z[h] * basis[h]``.
    """
    p = coeffs.p
    if p == 0:
        return np.zeros((0, horizon))
    eye = CascadeState(np.eye(p, dtype=complex))
    out, _ = run_cascade(coeffs, np.zeros((horizon, p), dtype=complex), eye)
    return out.T.real.copy()


def multistep_run(orders: ModelOrders, a: np.ndarray, b: np.ndarray, psi, init: np.ndarray,
                  noise: np.ndarray | None = None, bound: float | None = None) -> ComplexSeries:
    """Direct recursion ``A(q) y = sum_j Psi . b_j + noise`` (oracle for the cascade).

    Output ``y[n]`` for ``n >= p`` uses predictor lags ``Psi[n-p+j]``,
    ``j = 0..r``, so ``Psi[n-p+r]`` is the newest; ``y[:p] = init``.
    ``noise`` (same length as the output) is added at each computed step.
    """
    p, r = orders.p, orders.r
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=complex)
    if a.size != p or b.shape[0] != r + 1:
        raise ValueError("coefficient lengths do not match the orders")
    drive = _weighted_input(psi, b)  # (N_psi - r, d): drive[n] = sum_j Psi[n+j] b_j
    n_out = p + drive.shape[0]
    d = drive.shape[1]
    init = np.zeros((p, d), dtype=complex) if init is None else \
        np.asarray(init, dtype=complex).reshape(p, d)
    y = np.zeros((n_out, d), dtype=complex)
    y[:p] = init
    if noise is not None:
        noise = np.asarray(noise, dtype=complex).reshape(n_out, -1)
    scale = max(np.abs(drive).max(initial=0.0), np.abs(init).max(initial=0.0), 1e-300)
    limit = None if bound is None else bound * scale
    for n in range(p, n_out):
        acc = drive[n - p].copy()
        for i in range(p):
            acc -= a[i] * y[n - p + i]
        if noise is not None:
            acc += noise[n]
        y[n] = acc
        if limit is not None and not np.all(np.abs(acc) <= limit):
            raise InstabilityError("multistep recursion exceeded the instability bound", n)
    return ComplexSeries(y, 1.0, "multistep")


def _weighted_input(psi, b: np.ndarray) -> np.ndarray:
    r = b.shape[0] - 1
    if hasattr(psi, "apply"):
        parts = [psi.apply(b[j]) for j in range(r + 1)]
    else:
        vals = np.asarray(psi, dtype=complex)
        parts = [vals @ b[j] for j in range(r + 1)]
    n = parts[0].shape[0] - r
    if n < 1:
        raise ValueError("predictor series shorter than r + 1")
    return sum(parts[j][j:j + n] for j in range(r + 1))


def cascade_run(coeffs: CascadeCoefficients, b: np.ndarray, psi, init: np.ndarray | None = None,
                noise: np.ndarray | None = None, bound: float | None = None) -> ComplexSeries:
    """Cascade counterpart of :func:`multistep_run`, stepping stage by stage.

    ``init`` gives ``y[:p]``; the state is initialized by back-substitution.
    With ``noise`` the added term enters the output like in the direct
    recursion, i.e. as an extra stage-1 input.
    """
    p = coeffs.p
    b = np.asarray(b, dtype=complex)
    drive = _weighted_input(psi, b)
    d = drive.shape[1]
    init = np.zeros((p, d), dtype=complex) if init is None else \
        np.asarray(init, dtype=complex).reshape(p, d)
    state = init_from_history(coeffs, init)
    n_out = p + drive.shape[0]
    y = np.zeros((n_out, d), dtype=complex)
    y[:p] = init
    u = drive if noise is None else drive + np.asarray(noise, dtype=complex).reshape(n_out, d)[p:]
    if bound is None:
        out, _ = run_cascade(coeffs, u, state)
        y[p:] = out
        return ComplexSeries(y, 1.0, "cascade")
    scale = max(np.abs(drive).max(initial=0.0), np.abs(init).max(initial=0.0), 1e-300)
    for n in range(p, n_out):
        state, y[n] = cascade_step(state, coeffs, u[n - p])
        if not np.all(np.abs(y[n]) <= bound * scale):
            raise InstabilityError("cascade output exceeded the instability bound", n)
    return ComplexSeries(y, 1.0, "cascade")


def gain_bound(coeffs: CascadeCoefficients) -> float:
    """Conservative l1 gain of ``1/A(z)``: ``prod 1/(1 - |root|)``."""
    roots = np.abs(cascade_roots(coeffs))
    if np.any(roots >= 1):
        return np.inf
    return float(np.prod(1.0 / (1.0 - roots)))
