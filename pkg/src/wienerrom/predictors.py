"""Predictor bases ``Psi(x)``: the nonlinear regressors fed to the cascade.

A basis maps the recent observed states to a ``d x m`` complex matrix. Most
entries are zero (each column feeds a single output row for the spectral
bases), so series are stored compactly: ``values[n, k, c]`` is the entry in
row ``k`` and global column ``columns[k, c]``. :meth:`PredictorSeries.dense`
expands to the full ``(N, d, m)`` form.

Column layout of the spectral bases for ``K`` modes (``k, j = 1..K``):

* ``k - 1``                      : ``u_k`` (state)
* ``K + k - 1``                  : ``R(u)_k``, one ETDRK4 step of the K-mode truncation over ``delta``
* ``2K + (k - 1) K + (j - 1)``   : resolved/buffer interaction with buffer index ``|l| = K + j``

The interaction sum of output mode ``k`` runs over index pairs ``(l, k - l)``
with one member resolved (``|.| <= K``) and the other in the buffer band
``K < |.| <= 2K``; column ``j`` collects the pairs whose buffer member has
magnitude ``K + j``. Buffer values come from a quadratic reconstruction of
the unresolved modes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .core import ComplexSeries, WienerROMError
from .models import KS_L_DEFAULT, ETDRK4, make_stepper

BASIS_VERSION = 1
KINDS = ("ks", "burgers", "poly", "state")


class BasisVersionError(WienerROMError):
    """A stored basis descriptor does not match this code's column ordering."""


@lru_cache(maxsize=32)
def _galerkin_stepper(kind: str, n_modes: int, delta: float, L: float, nu: float) -> ETDRK4:
    return make_stepper(kind, n_modes, delta, L=L, nu=nu)


def galerkin_onestep(u: np.ndarray, delta: float, kind: str = "ks", L: float = KS_L_DEFAULT,
                     nu: float = 0.05) -> np.ndarray:
    """One ETDRK4 step of size ``delta`` for the K-mode Galerkin truncation (K = ``u.shape[-1]``)."""
    u = np.asarray(u, dtype=complex)
    return _galerkin_stepper(kind.lower(), u.shape[-1], float(delta), float(L), float(nu)).step(u)


def reconstruct_high_modes(u: np.ndarray, kind: str = "ks", nu: float = 0.05,
                           delta: float = 0.01, lag: int = 0) -> np.ndarray:
    """Modes ``K+1..2K`` estimated from the resolved ones, shape (..., K).

    KS: ``i sum_{l=j-K}^{K} u_l u_{j-l}``. Burgers: the same sum times
    ``(i lambda_j / 2) exp(-nu lambda_j^2 lag delta)`` with ``lambda_j = j``.
    """
    u = np.asarray(u, dtype=complex)
    K = u.shape[-1]
    out = np.zeros(u.shape, dtype=complex)
    for j in range(K + 1, 2 * K + 1):
        ls = np.arange(j - K, K + 1)
        out[..., j - K - 1] = np.sum(u[..., ls - 1] * u[..., j - ls - 1], axis=-1)
    if kind == "ks":
        return 1j * out
    lam = np.arange(K + 1, 2 * K + 1, dtype=float)
    return out * (0.5j * lam * np.exp(-nu * lam ** 2 * lag * delta))


def extended_modes(u: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Array ``e`` over indices ``-2K..2K`` (``e[..., l + 2K]``) with conjugate-symmetric negatives."""
    K = u.shape[-1]
    pos = np.concatenate([u, high], axis=-1)  # indices 1..2K
    zero = np.zeros(u.shape[:-1] + (1,), dtype=complex)
    return np.concatenate([np.conj(pos[..., ::-1]), zero, pos], axis=-1)


def interaction_pairs(k: int, K: int) -> list[tuple[int, int, int]]:
    """Index pairs ``(l, k - l, j)`` of the resolved/buffer interaction sum for output mode ``k``.

    ``j`` is the buffer magnitude minus ``K``. Brute force over the index set.
    """
    pairs = []
    for l in range(-2 * K, 2 * K + 1):
        lp = k - l
        if abs(lp) > 2 * K:
            continue
        one = abs(lp) <= K and K < abs(l) <= 2 * K
        two = abs(l) <= K and K < abs(lp) <= 2 * K
        if one or two:
            buf = l if one else lp
            pairs.append((l, lp, abs(buf) - K))
    return pairs


@lru_cache(maxsize=16)
def _interaction_index(K: int):
    """Index arrays (K, K, 2) for the two pairs of each (row k, column j); mask of nonzero entries."""
    first = np.zeros((K, K, 2), dtype=int)
    second = np.zeros((K, K, 2), dtype=int)
    count = np.zeros((K, K), dtype=int)
    for k in range(1, K + 1):
        for l, lp, j in interaction_pairs(k, K):
            slot = count[k - 1, j - 1]
            first[k - 1, j - 1, slot] = l + 2 * K
            second[k - 1, j - 1, slot] = lp + 2 * K
            count[k - 1, j - 1] += 1
    # every nonempty (k, j) cell holds exactly two pairs; empty cells read the zero mode
    assert set(np.unique(count)) <= {0, 2}
    first[count == 0] = 2 * K
    second[count == 0] = 2 * K
    return first, second, count > 0


def interaction_terms(ext_first: np.ndarray, ext_second: np.ndarray,
                      conjugate: bool) -> np.ndarray:
    """Interaction columns (..., K, K) from extended first/second factor arrays."""
    K = (ext_first.shape[-1] - 1) // 4
    first, second, mask = _interaction_index(K)
    a = ext_first[..., first]
    b = ext_second[..., second]
    if conjugate:
        b = np.conj(b)
    return np.where(mask, (a * b).sum(axis=-1), 0.0)


@dataclass(frozen=True)
class BasisSpec:
    """Serializable predictor-basis descriptor.

    Parameters
    ----------
    kind : {"ks", "burgers", "poly", "state"}
        ``poly`` (state entries plus the product ``x_1 x_2`` per row) and
        ``state`` (``Psi = diag(x)``) are small generic bases for synthetic
        problems.
    n_modes : int
        Observed dimension ``d`` (``K`` for the spectral bases).
    delta : float
        Observation interval; step size of the Galerkin map.
    conjugate : bool, optional
        Conjugate the second factor ``u_{k-l}`` of the interaction sum.
        Defaults to False, which keeps every term at wavenumber ``k`` so the
        columns transform like mode ``k`` under spatial shifts; the
        conjugated variant does not.
    first_factor : {"same", "previous"}
        Take the first interaction factor at the same time as the second or
        one observation earlier.
    lag : int
        Burgers only: lag ``j`` in the viscous memory weight of the buffer
        reconstruction. Fitting uses 0 since the weight is constant per
        column and lag and is absorbed in the cascade weights.
    coupled : bool
        ``poly`` only: every column feeds every row (cyclically permuted),
        exercising the dense solver path.
    """

    kind: str
    n_modes: int
    delta: float = 0.1
    L: float = KS_L_DEFAULT
    nu: float = 0.05
    conjugate: bool | None = None
    first_factor: str = "same"
    lag: int = 0
    coupled: bool = False
    version: int = BASIS_VERSION

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.conjugate is None:
            object.__setattr__(self, "conjugate", False)
        if self.first_factor not in ("same", "previous"):
            raise ValueError("first_factor must be 'same' or 'previous'")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if kind == "poly" and self.n_modes < 2:
            raise ValueError("poly basis needs d >= 2")
        if self.version != BASIS_VERSION:
            raise BasisVersionError(
                f"basis version {self.version} does not match code version {BASIS_VERSION}; "
                "column ordering differs and fitted weights are invalid")

    @property
    def basis_id(self) -> str:
        return f"{self.kind}-v{self.version}"

    @property
    def spectral(self) -> bool:
        return self.kind in ("ks", "burgers")

    @property
    def d(self) -> int:
        return self.n_modes

    @property
    def lag_depth(self) -> int:
        return 1 if (self.spectral and self.first_factor == "previous") else 0

    @property
    def m(self) -> int:
        K = self.n_modes
        if self.spectral:
            return 2 * K + K * K
        if self.kind == "poly":
            return K + 1 if self.coupled else K * (K + 1)
        return K

    @property
    def q_row(self) -> int:
        K = self.n_modes
        if self.spectral:
            return 2 + K
        if self.kind == "poly":
            return K + 1
        return 1

    def columns(self) -> np.ndarray:
        """Global column index of each compact entry, shape (d, q_row)."""
        K, q = self.n_modes, self.q_row
        k = np.arange(K)[:, None]
        if self.spectral:
            return np.concatenate([k, K + k, 2 * K + k * K + np.arange(K)[None, :]], axis=1)
        if self.kind == "poly":
            if self.coupled:
                return np.broadcast_to(np.arange(q), (K, q)).copy()
            return k * q + np.arange(q)[None, :]
        return k.copy()

    def evaluate(self, hist: np.ndarray) -> np.ndarray:
        """Compact predictor values from the last ``lag_depth + 1`` states.

        ``hist`` has shape (..., lag_depth + 1, d), newest last; returns
        (..., d, q_row).
        """
        hist = np.asarray(hist, dtype=complex)
        if hist.shape[-2] < self.lag_depth + 1:
            raise ValueError(f"history of depth {hist.shape[-2]} too short; need {self.lag_depth + 1}")
        u = hist[..., -1, :]
        if self.kind == "state":
            return u[..., :, None]
        if self.kind == "poly":
            feats = np.concatenate([u, (u[..., 0] * u[..., 1])[..., None]], axis=-1)
            if not self.coupled:
                return np.broadcast_to(feats[..., None, :], u.shape + (self.q_row,)).copy()
            q = self.q_row
            idx = (np.arange(q)[None, :] + np.arange(self.n_modes)[:, None]) % q
            return feats[..., idx]
        kind = self.kind
        rmap = galerkin_onestep(u, self.delta, kind, L=self.L, nu=self.nu)
        high = reconstruct_high_modes(u, kind, nu=self.nu, delta=self.delta, lag=self.lag)
        ext = extended_modes(u, high)
        if self.first_factor == "previous":
            up = hist[..., -2, :]
            high_p = reconstruct_high_modes(up, kind, nu=self.nu, delta=self.delta,
                                            lag=self.lag + 1)
            ext_first = extended_modes(up, high_p)
        else:
            ext_first = ext
        inter = interaction_terms(ext_first, ext, self.conjugate)
        return np.concatenate([u[..., None], rmap[..., None], inter], axis=-1)

    def series(self, x, chunk: int = 20000) -> "PredictorSeries":
        """Predictor values along a trajectory, aligned with ``x[lag_depth:]``."""
        v = x.values if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
        if v.ndim != 2 or v.shape[1] != self.d:
            raise ValueError(f"expected states of shape (N, {self.d}), got {v.shape}")
        depth = self.lag_depth
        n_out = v.shape[0] - depth
        if n_out < 1:
            raise ValueError(f"history too short: need more than {depth} states")
        out = np.empty((n_out, self.d, self.q_row), dtype=complex)
        for s in range(0, n_out, chunk):
            e = min(n_out, s + chunk)
            idx = np.arange(s, e)[:, None] + np.arange(depth + 1)[None, :]
            out[s:e] = self.evaluate(v[idx])
        return PredictorSeries(out, self.columns(), self.m, self, start=depth)

    def dense(self, hist: np.ndarray) -> np.ndarray:
        """Full (..., d, m) predictor matrix at one time."""
        return to_dense(self.evaluate(hist), self.columns(), self.m)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        d = dict(d)
        if d.get("version") != BASIS_VERSION:
            raise BasisVersionError(
                f"stored basis version {d.get('version')} != {BASIS_VERSION}; refit the model")
        return cls(**d)


def to_dense(values: np.ndarray, columns: np.ndarray, m: int) -> np.ndarray:
    out = np.zeros(values.shape[:-1] + (m,), dtype=complex)
    d = columns.shape[0]
    for k in range(d):
        out[..., k, columns[k]] += values[..., k, :]
    return out


@dataclass(frozen=True)
class PredictorSeries:
    """Compact sequence of predictor matrices ``Psi_n``.

    ``values`` (N, d, q_row) holds the entries that can be nonzero and
    ``columns`` (d, q_row) their global column indices; ``start`` is the
    index of the first entry within the trajectory it was computed from.
    """

    values: np.ndarray
    columns: np.ndarray
    m: int
    basis: BasisSpec | None = None
    start: int = 0
    _diag: bool | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[1:] != self.columns.shape:
            raise ValueError(f"values {v.shape} do not match columns {self.columns.shape}")
        if self.columns.size and self.columns.max() >= self.m:
            raise ValueError("column index beyond predictor width")

    @classmethod
    def from_dense(cls, dense: np.ndarray, basis: BasisSpec | None = None,
                   start: int = 0) -> "PredictorSeries":
        dense = np.asarray(dense, dtype=complex)
        n, d, m = dense.shape
        cols = np.broadcast_to(np.arange(m), (d, m)).copy()
        return cls(dense, cols, m, basis, start)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def lag_depth(self) -> int:
        return 0 if self.basis is None else self.basis.lag_depth

    @property
    def basis_id(self) -> str:
        return "dense" if self.basis is None else self.basis.basis_id

    def is_row_disjoint(self) -> bool:
        """True when no global column feeds more than one output row."""
        cols = self.columns
        flat = cols.reshape(-1)
        return np.unique(flat).size == flat.size

    def dense(self) -> np.ndarray:
        return to_dense(self.values, self.columns, self.m)

    def window(self, start: int, stop: int | None = None) -> "PredictorSeries":
        return PredictorSeries(self.values[start:stop], self.columns, self.m, self.basis,
                               self.start + start)

    def apply(self, weights: np.ndarray) -> np.ndarray:
        """``Psi_n . b`` for every n with an m-vector ``b``; shape (N, d)."""
        b = np.asarray(weights)[self.columns]  # (d, q_row)
        return np.einsum("nkc,kc->nk", self.values, b)


def ks_basis(u_history: np.ndarray, delta: float = 0.1, L: float = KS_L_DEFAULT,
             conjugate: bool = False, first_factor: str = "same") -> np.ndarray:
    """Dense KS predictor matrix ``K x (2K + K^2)`` at the newest state of ``u_history``."""
    u_history = np.atleast_2d(np.asarray(u_history, dtype=complex))
    spec = BasisSpec("ks", u_history.shape[-1], delta=delta, L=L, conjugate=conjugate,
                     first_factor=first_factor)
    need = spec.lag_depth + 1
    if u_history.shape[0] < need:
        raise ValueError(f"history of {u_history.shape[0]} states too short; need {need}")
    return spec.dense(u_history[-need:])


def burgers_basis(u_history: np.ndarray, j_max: int, nu: float = 0.05, delta: float = 0.01,
                  conjugate: bool = False) -> np.ndarray:
    """Lagged Burgers predictors ``Psi_{n-j}`` for ``j = 0..j_max``, shape (j_max+1, K, 2K+K^2).

    Entry ``j`` is evaluated on ``u_history[-1-j]`` with viscous memory
    weight ``exp(-nu lambda^2 j delta)`` on the reconstructed buffer modes.
    """
    u_history = np.atleast_2d(np.asarray(u_history, dtype=complex))
    if j_max < 0:
        raise ValueError("j_max must be >= 0")
    if u_history.shape[0] < j_max + 1:
        raise ValueError(f"history of {u_history.shape[0]} states too short; need {j_max + 1}")
    K = u_history.shape[-1]
    out = []
    for j in range(j_max + 1):
        spec = BasisSpec("burgers", K, delta=delta, nu=nu, conjugate=conjugate, lag=j)
        out.append(spec.dense(u_history[-1 - j][None, :]))
    return np.stack(out)
