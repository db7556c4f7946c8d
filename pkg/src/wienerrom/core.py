"""Shared types, cascade polynomial algebra and the stability triangle.

Polynomial coefficient arrays are stored constant-first throughout: for a
monic ``A(z) = z^p + a[p-1] z^(p-1) + ... + a[0]`` the array is
``[a[0], ..., a[p-1]]`` and the leading 1 is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

DEFAULT_MARGIN = 1e-6


class WienerROMError(Exception):
    """Base class for package errors."""


class InstabilityError(WienerROMError):
    """A recursion or integrator produced non-finite or runaway values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ComplexSeries:
    """Uniformly sampled vector time series of shape (N, d)."""

    values: np.ndarray
    dt: float
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError(f"series values must be (N, d), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("series needs N >= 1 samples of dimension d >= 1")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", _frozen(v.astype(complex)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n

    def window(self, start: int, stop: int | None = None) -> "ComplexSeries":
        return ComplexSeries(self.values[start:stop], self.dt, self.label)

    def is_real(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values.imag) <= tol))


@dataclass(frozen=True)
class ModelOrders:
    """Memory order ``p`` (degree of A) and predictor-lag order ``r`` (degree of B)."""

    p: int
    r: int

    def __post_init__(self):
        if self.p < 0 or self.r < 0:
            raise ValueError(f"orders must be nonnegative, got p={self.p}, r={self.r}")
        if self.r > self.p:
            raise ValueError(f"explicit cascade needs p >= r, got p={self.p}, r={self.r}")

    @property
    def n_stages(self) -> int:
        return self.p // 2


def triangle_contains(alpha: float, beta: float, margin: float = 0.0) -> bool:
    """Whether ``(alpha, beta)`` lies in the stability triangle of ``z^2 + alpha z + beta``.

    The triangle has vertices (-2, 1), (2, 1) and (0, -1); a positive margin
    shrinks each edge inward by that amount.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return bool(
        beta <= 1.0 - margin
        and beta >= alpha - 1.0 + margin
        and beta >= -alpha - 1.0 + margin
    )


def triangle_constraints(n_pairs: int, has_linear: bool, margin: float = 0.0):
    """Linear inequality system ``G @ theta <= h`` for a packed parameter vector.

    The packing is ``[alpha_1, beta_1, ..., alpha_s, beta_s, (alpha_0)]``.
    """
    n = 2 * n_pairs + int(has_linear)
    rows, rhs = [], []
    for i in range(n_pairs):
        for ca, cb in ((0.0, 1.0), (1.0, -1.0), (-1.0, -1.0)):
            row = np.zeros(n)
            row[2 * i], row[2 * i + 1] = ca, cb
            rows.append(row)
            rhs.append(1.0 - margin)
    if has_linear:
        for sign in (1.0, -1.0):
            row = np.zeros(n)
            row[-1] = sign
            rows.append(row)
            rhs.append(1.0 - margin)
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def roots_inside_unit_disc(a: Sequence[float] | np.ndarray) -> bool:
    """True iff every root of the monic polynomial with constant-first coefficients ``a`` has modulus < 1."""
    a = np.atleast_1d(np.asarray(a))
    if a.size == 0:
        raise ValueError("need a polynomial of degree >= 1")
    return bool(np.all(np.abs(monic_roots(a)) < 1.0))


def monic_roots(a: np.ndarray) -> np.ndarray:
    """Roots of ``z^p + a[p-1] z^(p-1) + ... + a[0]`` (companion eigenvalues)."""
    a = np.asarray(a)
    return np.roots(np.concatenate([[1.0], a[::-1]]))


@dataclass(frozen=True)
class CascadeCoefficients:
    """Quadratic factors ``z^2 + alpha_i z + beta_i`` plus an optional linear factor ``z + alpha_0``.

    Construction validates triangle membership with the given margin; pass
    ``check=False`` to hold a deliberately unstable factorization (e.g. a
    flagged linear-regression result).
    """

    pairs: tuple[tuple[float, float], ...] = ()
    linear: float | None = None
    margin: float = DEFAULT_MARGIN
    check: bool = field(default=True, compare=False)

    def __post_init__(self):
        pairs = tuple((float(a), float(b)) for a, b in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if self.linear is not None:
            object.__setattr__(self, "linear", float(self.linear))
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.check and not self.is_stable():
            raise ValueError(f"cascade coefficients outside the stability region: {self}")

    @property
    def p(self) -> int:
        return 2 * len(self.pairs) + (self.linear is not None)

    @property
    def n_stages(self) -> int:
        return len(self.pairs)

    def is_stable(self, margin: float | None = None) -> bool:
        m = self.margin if margin is None else margin
        ok = all(triangle_contains(a, b, m) for a, b in self.pairs)
        if self.linear is not None:
            ok = ok and abs(self.linear) <= 1.0 - m
        return ok

    def to_vector(self) -> np.ndarray:
        v = [x for pair in self.pairs for x in pair]
        if self.linear is not None:
            v.append(self.linear)
        return np.array(v, dtype=float)

    @classmethod
    def from_vector(cls, theta, p: int, margin: float = DEFAULT_MARGIN, check: bool = True):
        theta = np.asarray(theta, dtype=float)
        s = p // 2
        if theta.size != p:
            raise ValueError(f"expected {p} parameters, got {theta.size}")
        pairs = tuple((theta[2 * i], theta[2 * i + 1]) for i in range(s))
        linear = theta[-1] if p % 2 else None
        return cls(pairs, linear, margin, check)

    @classmethod
    def zeros(cls, p: int, margin: float = DEFAULT_MARGIN):
        return cls.from_vector(np.zeros(p), p, margin)

    def permuted(self, order: Sequence[int]) -> "CascadeCoefficients":
        return CascadeCoefficients(tuple(self.pairs[i] for i in order), self.linear,
                                   self.margin, self.check)


def expand_cascade(c: CascadeCoefficients) -> np.ndarray:
    """Coefficients ``a[0..p-1]`` (constant-first) of ``A(z) = prod(z^2 + alpha z + beta) (z + alpha_0)``."""
    poly = np.array([1.0])  # highest power first while multiplying
    for alpha, beta in c.pairs:
        poly = np.polymul(poly, [1.0, alpha, beta])
    if c.linear is not None:
        poly = np.polymul(poly, [1.0, c.linear])
    return poly[1:][::-1].copy()


def cascade_roots(c: CascadeCoefficients) -> np.ndarray:
    """Union of the factor roots, without expanding the product."""
    roots = [np.roots([1.0, a, b]) for a, b in c.pairs]
    if c.linear is not None:
        roots.append(np.array([-c.linear]))
    return np.concatenate(roots) if roots else np.zeros(0, dtype=complex)


def cascade_from_polynomial(a: np.ndarray, margin: float = DEFAULT_MARGIN,
                            imag_tol: float = 1e-9) -> CascadeCoefficients:
    """Factor a real monic polynomial into cascade form by pairing conjugate roots.

    Complex roots whose conjugate partner is only approximately present are
    symmetrized before pairing. The result is built with ``check=False``;
    callers inspect ``is_stable()``.
    """
    a = np.asarray(a, dtype=float)
    p = a.size
    if p == 0:
        return CascadeCoefficients((), None, margin)
    roots = list(monic_roots(a))
    real = sorted((r.real for r in roots if abs(r.imag) <= imag_tol * max(1.0, abs(r))),
                  key=abs, reverse=True)
    cplx = [r for r in roots if abs(r.imag) > imag_tol * max(1.0, abs(r))]
    upper = sorted((r for r in cplx if r.imag > 0), key=lambda z: z.real)
    lower = sorted((r for r in cplx if r.imag < 0), key=lambda z: z.real)
    if len(upper) != len(lower):
        # unmatched roots: demote the ones with the smallest imaginary part to real
        extra = sorted(upper + lower, key=lambda z: abs(z.imag))
        while len(upper) != len(lower):
            z = extra.pop(0)
            (upper if z.imag > 0 else lower).remove(z)
            real.append(z.real)
    pairs = []
    for zu in upper:
        zl = min(lower, key=lambda z: abs(z - np.conj(zu)))
        lower.remove(zl)
        zm = 0.5 * (zu + np.conj(zl))
        pairs.append((-2.0 * zm.real, abs(zm) ** 2))
    linear = None
    if len(real) % 2:
        # leave the root of smallest modulus in the linear factor
        linear = -real.pop()
    for r1, r2 in zip(real[0::2], real[1::2]):
        pairs.append((-(r1 + r2), r1 * r2))
    return CascadeCoefficients(tuple(pairs), linear, margin, check=False)


@dataclass(frozen=True)
class CascadeModel:
    """A fitted reduced model.

    ``weights`` has shape (r+1, m): block ``weights[j]`` multiplies the
    predictor matrix lagged so that ``weights[r]`` sees the most recent one.
    ``basis`` is the serializable predictor-basis descriptor (see
    :mod:`wienerrom.predictors`). Shared-forcing models also carry
    ``forcing_weights`` of shape (q+1, d): row ``i`` multiplies, component by
    component, the aggregated forcing ``i`` steps ahead of the newest
    predictor lag.
    """

    orders: ModelOrders
    cascade: CascadeCoefficients
    weights: np.ndarray
    basis: Any
    state_dim: int
    predictor_dim: int
    forcing_weights: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=complex)
        if w.ndim != 2:
            raise ValueError(f"weights must be (r+1, m), got shape {w.shape}")
        if w.shape[0] != self.orders.r + 1:
            raise ValueError(f"need r+1={self.orders.r + 1} weight blocks, got {w.shape[0]}")
        if w.shape[1] != self.predictor_dim:
            raise ValueError(f"weight width {w.shape[1]} != predictor dim {self.predictor_dim}")
        if self.cascade.p != self.orders.p:
            raise ValueError(f"cascade degree {self.cascade.p} != p={self.orders.p}")
        object.__setattr__(self, "weights", _frozen(w))
        if self.forcing_weights is not None:
            c = np.asarray(self.forcing_weights, dtype=complex)
            if c.ndim != 2 or c.shape[1] != self.state_dim:
                raise ValueError(f"forcing weights must be (q+1, d={self.state_dim}), got {c.shape}")
            object.__setattr__(self, "forcing_weights", _frozen(c))

    @property
    def forcing_order(self) -> int | None:
        return None if self.forcing_weights is None else self.forcing_weights.shape[0] - 1

    @property
    def p(self) -> int:
        return self.orders.p

    @property
    def r(self) -> int:
        return self.orders.r

    def a(self) -> np.ndarray:
        return expand_cascade(self.cascade)

    def is_stable(self) -> bool:
        return self.cascade.is_stable(0.0) and (
            self.p == 0 or roots_inside_unit_disc(self.a()))


@dataclass(frozen=True)
class NoiseModel:
    """Spectral factors ``f(theta_j)`` on ``M`` equispaced angles ``2 pi j / M``.

    ``real`` marks a model for real-valued series; its samples are projected
    to the real line with the matching variance correction.
    """

    factors: np.ndarray
    real: bool = False
    seed: int | None = None

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=complex)
        if f.ndim == 1:
            f = f[:, None, None]
        if f.ndim != 3 or f.shape[1] != f.shape[2]:
            raise ValueError(f"factors must be (M, d, d), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("noise factors contain non-finite values")
        object.__setattr__(self, "factors", _frozen(f))

    @property
    def m(self) -> int:
        return self.factors.shape[0]

    @property
    def d(self) -> int:
        return self.factors.shape[1]

    @property
    def freqs(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.m) / self.m

    def spectrum(self) -> np.ndarray:
        f = self.factors
        return f @ np.conj(np.swapaxes(f, 1, 2))

    @classmethod
    def zero(cls, d: int, m: int = 8, real: bool = False):
        return cls(np.zeros((m, d, d), dtype=complex), real)

    @classmethod
    def white(cls, d: int, variance: float = 1.0, m: int = 8, real: bool = False):
        f = np.broadcast_to(np.sqrt(variance) * np.eye(d), (m, d, d))
        return cls(np.array(f, dtype=complex), real)
