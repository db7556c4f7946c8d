"""Full-model data generators: Kuramoto-Sivashinsky and stochastically forced
Burgers, in Fourier variables, integrated with ETDRK4.

State vectors hold the complex coefficients ``u_k`` for ``k = 1..n_modes`` of a
real ``2 pi``-periodic (Burgers) or ``L``-periodic (KS) field
``U(x) = sum_k u_k exp(i lambda_k x)``; ``u_0`` is identically zero and
negative modes follow from conjugate symmetry. All state arrays may carry
arbitrary leading batch dimensions.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .core import ComplexSeries, InstabilityError

log = logging.getLogger(__name__)

KS_L_DEFAULT = 21.55


@dataclass(frozen=True)
class SpectralPDEConfig:
    kind: str = "ks"
    L: float = KS_L_DEFAULT
    n_modes: int = 108
    nu: float = 0.05
    dt: float = 1e-3
    stride: int = 100
    burn_in: int = 0
    n_obs: int = 1000
    n_observed: int = 5
    sigma: tuple = ()
    seed: int = 0
    ic_amplitude: float = 0.1
    record_forcing: bool = False
    record_raw_forcing: bool = False

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("ks", "burgers"):
            raise ValueError(f"unknown PDE kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "burgers":
            object.__setattr__(self, "L", 2 * np.pi)
            if not self.sigma:
                object.__setattr__(self, "sigma", burgers_sigma_default(self.n_modes))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.stride < 1 or self.n_modes < 1 or self.n_obs < 1:
            raise ValueError("stride, n_modes and n_obs must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if not 1 <= self.n_observed <= self.n_modes:
            raise ValueError("n_observed must be in [1, n_modes]")
        if kind == "burgers" and not self.nu > 0:
            raise ValueError("Burgers viscosity must be positive")
        if self.sigma and len(self.sigma) != self.n_modes:
            raise ValueError(f"sigma needs {self.n_modes} entries, got {len(self.sigma)}")
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))

    @property
    def delta(self) -> float:
        return self.dt * self.stride

    @property
    def stochastic(self) -> bool:
        return any(s != 0 for s in self.sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma"] = list(self.sigma)
        return d


def burgers_sigma_default(n_modes: int, k_forced: int = 4) -> tuple:
    return tuple(1.0 if k <= k_forced else 0.0 for k in range(1, n_modes + 1))


@dataclass(frozen=True)
class TrajectoryRecord:
    observed: ComplexSeries
    config: SpectralPDEConfig
    forcing_agg: ComplexSeries | None = None
    raw_forcing: np.ndarray | None = None
    final_state: np.ndarray | None = field(default=None, repr=False)


class SpectralPDE:
    """Linear symbol and dealiased quadratic term of a 1-D spectral model.

    ``linear`` is ``lambda^2 - lambda^4`` for KS and ``-nu lambda^2`` for
    Burgers; the quadratic term is ``-(i lambda_k / 2) sum_l u_l u_{k-l}``
    evaluated on a grid of ``M >= 3 n_modes + 1`` points (alias free).
    """

    def __init__(self, kind: str, n_modes: int, L: float = KS_L_DEFAULT, nu: float = 0.05):
        self.kind = kind.lower()
        self.n_modes = int(n_modes)
        self.L = 2 * np.pi if self.kind == "burgers" else float(L)
        self.nu = float(nu)
        k = np.arange(1, self.n_modes + 1)
        self.wavenumbers = 2 * np.pi * k / self.L
        lam = self.wavenumbers
        if self.kind == "ks":
            self.linear = lam ** 2 - lam ** 4
        elif self.kind == "burgers":
            self.linear = -self.nu * lam ** 2
        else:
            raise ValueError(f"unknown PDE kind {kind!r}")
        self.n_grid = sfft.next_fast_len(3 * self.n_modes + 1, real=True)
        self._nl_factor = -0.5j * lam
        self._buf = np.zeros(self.n_grid // 2 + 1, dtype=complex)

    def to_grid(self, u: np.ndarray) -> np.ndarray:
        if u.ndim == 1:
            full = self._buf  # reused on the hot single-trajectory path
        else:
            full = np.zeros(u.shape[:-1] + (self.n_grid // 2 + 1,), dtype=complex)
        full[..., 1:self.n_modes + 1] = u
        return sfft.irfft(full, n=self.n_grid, axis=-1) * self.n_grid

    def from_grid(self, field_: np.ndarray) -> np.ndarray:
        return sfft.rfft(field_, axis=-1)[..., 1:self.n_modes + 1] / self.n_grid

    def quadratic(self, u: np.ndarray) -> np.ndarray:
        """``sum_l u_l u_{k-l}`` for k = 1..n_modes (full convolution incl. negative modes)."""
        g = self.to_grid(u)
        return self.from_grid(g * g)

    def nonlinear(self, u: np.ndarray) -> np.ndarray:
        return self._nl_factor * self.quadratic(u)

    def rhs(self, u: np.ndarray) -> np.ndarray:
        return self.linear * u + self.nonlinear(u)


def ks_rhs(u: np.ndarray, L: float = KS_L_DEFAULT) -> np.ndarray:
    """Tendency of the Fourier-truncated KS equation for the modes in ``u``."""
    u = np.asarray(u, dtype=complex)
    return SpectralPDE("ks", u.shape[-1], L=L).rhs(u)


def burgers_rhs(u: np.ndarray, nu: float = 0.05) -> np.ndarray:
    """Deterministic tendency of the Fourier-truncated viscous Burgers equation."""
    u = np.asarray(u, dtype=complex)
    return SpectralPDE("burgers", u.shape[-1], nu=nu).rhs(u)


def phi_coefficients(hl: np.ndarray, n_contour: int = 32):
    """ETDRK4 coefficients for diagonal ``h*L`` via contour means (radius 1).

    Returns ``(E, E2, Q, f1, f2, f3)`` without the factor ``h``.
    """
    hl = np.asarray(hl, dtype=complex)
    roots = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour * 2)
    lr = hl[..., None] + roots
    elr = np.exp(lr)
    q = np.mean((np.exp(lr / 2) - 1) / lr, axis=-1)
    f1 = np.mean((-4 - lr + elr * (4 - 3 * lr + lr ** 2)) / lr ** 3, axis=-1)
    f2 = np.mean((2 + lr + elr * (-2 + lr)) / lr ** 3, axis=-1)
    f3 = np.mean((-4 - 3 * lr - lr ** 2 + elr * (4 - lr)) / lr ** 3, axis=-1)
    out = [np.exp(hl), np.exp(hl / 2), q, f1, f2, f3]
    if np.all(np.isreal(hl)):
        out = [o.real for o in out]
    return tuple(out)


class ETDRK4:
    """Fourth-order exponential time differencing Runge-Kutta for ``u' = L u + N(u)``."""

    def __init__(self, linear: np.ndarray, nonlinear: Callable[[np.ndarray], np.ndarray],
                 dt: float, n_contour: int = 32):
        self.dt = float(dt)
        self.linear = np.asarray(linear)
        self.nonlinear = nonlinear
        e, e2, q, f1, f2, f3 = phi_coefficients(self.dt * self.linear, n_contour)
        h = self.dt
        self.E, self.E2 = e, e2
        self.Q, self.f1, self.f2, self.f3 = h * q, h * f1, h * f2, h * f3

    def step(self, u: np.ndarray) -> np.ndarray:
        n_u = self.nonlinear(u)
        a = self.E2 * u + self.Q * n_u
        n_a = self.nonlinear(a)
        b = self.E2 * u + self.Q * n_a
        n_b = self.nonlinear(b)
        c = self.E2 * a + self.Q * (2 * n_b - n_u)
        n_c = self.nonlinear(c)
        return self.E * u + self.f1 * n_u + 2 * self.f2 * (n_a + n_b) + self.f3 * n_c


def make_stepper(kind: str, n_modes: int, dt: float, L: float = KS_L_DEFAULT,
                 nu: float = 0.05) -> ETDRK4:
    pde = SpectralPDE(kind, n_modes, L=L, nu=nu)
    stepper = ETDRK4(pde.linear, pde.nonlinear, dt)
    stepper.pde = pde
    return stepper


def etdrk4_step(u: np.ndarray, dt: float, kind: str = "ks", L: float = KS_L_DEFAULT,
                nu: float = 0.05, stepper: ETDRK4 | None = None) -> np.ndarray:
    """One deterministic ETDRK4 step; pass a prebuilt ``stepper`` inside loops."""
    u = np.asarray(u, dtype=complex)
    if stepper is None:
        stepper = make_stepper(kind, u.shape[-1], dt, L=L, nu=nu)
    out = stepper.step(u)
    if not np.all(np.isfinite(out)):
        raise InstabilityError("ETDRK4 step produced non-finite state")
    return out


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex Gaussian with unit ``E|w|^2`` (real and imaginary variance 1/2)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def stochastic_step(u: np.ndarray, dt: float, rng: np.random.Generator, sigma: np.ndarray,
                    stepper: ETDRK4 | Callable | None = None, kind: str = "burgers",
                    nu: float = 0.05):
    """``u_next = G(u, dt) + sqrt(dt) sigma w`` with ``G`` the deterministic ETDRK4 map.

    ``stepper`` may be an :class:`ETDRK4` or any callable standing in for
    ``G``. Returns ``(u_next, w)``.
    """
    u = np.asarray(u, dtype=complex)
    sigma = np.asarray(sigma, dtype=float)
    if stepper is None:
        stepper = make_stepper(kind, u.shape[-1], dt, nu=nu)
    g = stepper.step if hasattr(stepper, "step") else stepper
    w = complex_normal(rng, u.shape)
    out = g(u) + np.sqrt(dt) * sigma * w
    if not np.all(np.isfinite(out)):
        raise InstabilityError("stochastic step produced non-finite state")
    return out, w


def random_initial_condition(n_modes: int, rng: np.random.Generator,
                             amplitude: float = 0.1) -> np.ndarray:
    """Smooth random field: Gaussian coefficients with variance ~ k^-4."""
    k = np.arange(1, n_modes + 1)
    return amplitude * complex_normal(rng, n_modes) / k ** 2


def physical_field(u: np.ndarray, n_grid: int | None = None) -> np.ndarray:
    """Real-space field on ``n_grid`` points (returns complex to expose any imaginary residue)."""
    n_modes = u.shape[-1]
    n_grid = n_grid or 2 * n_modes + 2
    full = np.zeros(u.shape[:-1] + (n_grid,), dtype=complex)
    full[..., 1:n_modes + 1] = u
    full[..., n_grid - n_modes:] = np.conj(u[..., ::-1])
    return sfft.ifft(full, axis=-1) * n_grid


def generate_trajectory(config: SpectralPDEConfig, u0: np.ndarray | None = None,
                        progress: bool = False) -> TrajectoryRecord:
    """Integrate the full model and record every ``stride``-th step of the first modes.

    The first ``burn_in`` integrator steps are discarded; then ``n_obs``
    observations are taken at interval ``delta = stride * dt``, starting
    with the post-burn-in state. With stochastic forcing and
    ``record_forcing``, ``forcing_agg[n]`` holds the normalized sum of the
    ``stride`` forcing draws that carry observation ``n`` to ``n + 1``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    stepper = make_stepper(cfg.kind, cfg.n_modes, cfg.dt, L=cfg.L, nu=cfg.nu)
    u = random_initial_condition(cfg.n_modes, rng, cfg.ic_amplitude) if u0 is None \
        else np.array(u0, dtype=complex)
    if u.shape != (cfg.n_modes,):
        raise ValueError(f"initial state must have {cfg.n_modes} modes")
    sigma = np.array(cfg.sigma if cfg.sigma else np.zeros(cfg.n_modes))
    forced = np.flatnonzero(sigma)
    sig_f = sigma[forced]
    sqdt = np.sqrt(cfg.dt)
    k_obs = cfg.n_observed
    obs = np.empty((cfg.n_obs, k_obs), dtype=complex)
    agg = np.zeros((cfg.n_obs, k_obs), dtype=complex) if cfg.record_forcing else None
    raw = np.zeros((cfg.n_obs * cfg.stride, forced.size), dtype=complex) \
        if cfg.record_raw_forcing else None
    n_force_obs = min(k_obs, cfg.n_modes)

    def advance(n_steps: int, sink_agg=None, sink_raw=None):
        nonlocal u
        if forced.size == 0:
            for _ in range(n_steps):
                u = stepper.step(u)
            return
        w_all = complex_normal(rng, (n_steps, forced.size))
        for i in range(n_steps):
            u = stepper.step(u)
            u[forced] += sqdt * sig_f * w_all[i]
        if sink_agg is not None:
            full = np.zeros(n_force_obs, dtype=complex)
            sel = forced < n_force_obs
            full[forced[sel]] = w_all[:, sel].sum(axis=0) / np.sqrt(n_steps)
            sink_agg[:] = full
        if sink_raw is not None:
            sink_raw[:] = w_all

    chunk = 10_000
    done = 0
    while done < cfg.burn_in:
        n = min(chunk, cfg.burn_in - done)
        advance(n)
        done += n
        if not np.all(np.isfinite(u)):
            raise InstabilityError("full model blew up during burn-in", done)
    for n in range(cfg.n_obs):
        obs[n] = u[:k_obs]
        advance(cfg.stride,
                agg[n] if agg is not None else None,
                raw[n * cfg.stride:(n + 1) * cfg.stride] if raw is not None else None)
        if n % 100 == 99 and not np.all(np.isfinite(u)):
            raise InstabilityError("full model blew up", cfg.burn_in + (n + 1) * cfg.stride)
        if progress and n % 10_000 == 0:
            log.info("observation %d / %d", n, cfg.n_obs)
    if not np.all(np.isfinite(obs)):
        bad = int(np.argmax(~np.all(np.isfinite(obs), axis=1)))
        raise InstabilityError("full model blew up", cfg.burn_in + bad * cfg.stride)
    label = f"{cfg.kind}-{cfg.n_modes}"
    return TrajectoryRecord(
        observed=ComplexSeries(obs, cfg.delta, label),
        config=cfg,
        forcing_agg=None if agg is None else ComplexSeries(agg, cfg.delta, label + "-wbar"),
        raw_forcing=raw,
        final_state=u.copy(),
    )


def run_forced(config: SpectralPDEConfig, u0: np.ndarray, raw_forcing: np.ndarray,
               n_obs: int) -> ComplexSeries:
    """Replay a recorded substep forcing (forced-mode columns) through a model of any size.

    Used to drive a Galerkin truncation with the exact forcing of a full run.
    """
    cfg = config
    stepper = make_stepper(cfg.kind, cfg.n_modes, cfg.dt, L=cfg.L, nu=cfg.nu)
    sigma = np.array(cfg.sigma)
    forced = np.flatnonzero(sigma)
    if raw_forcing.shape[1] != forced.size:
        raise ValueError("recorded forcing does not match the forced modes of this model")
    sqdt = np.sqrt(cfg.dt)
    u = np.array(u0, dtype=complex)[:cfg.n_modes]
    out = np.empty((n_obs, min(cfg.n_observed, cfg.n_modes)), dtype=complex)
    for n in range(n_obs):
        out[n] = u[:out.shape[1]]
        for i in range(n * cfg.stride, (n + 1) * cfg.stride):
            u = stepper.step(u)
            u[forced] += sqdt * sigma[forced] * raw_forcing[i]
    return ComplexSeries(out, cfg.delta, f"{cfg.kind}-{cfg.n_modes}-forced")
