"""Parameter estimation for cascade NARMAX models.

Two routes are provided:

* :func:`fit_nonlinear` minimizes the one-step prediction error over the
  cascade coefficients ``(alpha_i, beta_i)`` with a derivative-free,
  linearly constrained local optimizer; for fixed coefficients the weights
  and the homogeneous initial conditions enter linearly and are obtained by
  :func:`inner_solve`.
* :func:`fit_linear` regresses the multistep form directly for ``(a, b)``
  and factors ``A(z)`` afterwards.

Index conventions. After aligning the data with the predictor series
(``X = x[psi.start:]``), the prediction of ``X[t]`` is the cascade output
``w_t`` with ``A(q) w_t = sum_j Psi[t-1-p+j] b_j (+ sum_i c_i * F[t-1+i])``.
The cascade state at ``t = p`` either reproduces ``w_1..w_p = X[1..p]`` or
is fitted, and residuals ``X[t] - w_t`` are defined for ``t = p+1..``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla
from scipy.optimize import Bounds, LinearConstraint, minimize

from .cascade import CascadeState, init_from_history, run_cascade, zero_input_basis
from .core import (DEFAULT_MARGIN, CascadeCoefficients, CascadeModel, ComplexSeries,
                   ModelOrders, WienerROMError, cascade_from_polynomial, triangle_constraints)
from .predictors import PredictorSeries

log = logging.getLogger(__name__)

DEFAULT_STARTS = ((0.0, 0.0), (0.5, 0.25), (-0.5, 0.25), (0.0, 0.5), (0.0, -0.5))
LINEAR_STARTS = (0.0, 0.5, -0.5, 0.25, -0.25)


class IllConditionedError(WienerROMError):
    """Rank-deficient regressors in an unregularized solve."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Outer-search settings.

    ``max_evals`` is the budget per start; ``rtol`` sets the final
    trust-region radius. ``starts`` adds packed parameter vectors to the
    default interior start points.
    """

    algorithm: str = "cobyqa"
    max_evals: int = 2000
    initial_radius: float = 0.2
    rtol: float = 1e-8
    starts: tuple = ()
    default_starts: bool = True
    n_starts: int | None = None

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")
        if self.algorithm.lower() not in ("cobyqa", "cobyla"):
            raise ValueError(f"unsupported optimizer {self.algorithm!r}")


@dataclass(frozen=True)
class FitConfig:
    orders: ModelOrders
    margin: float = DEFAULT_MARGIN
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    ridge: float = 1e-8
    fit_internal_ics: bool = True
    forcing_order: int | None = None
    cond_warn: float = 1e10

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.forcing_order is not None and self.forcing_order < 0:
            raise ValueError("forcing_order must be >= 0")


@dataclass
class InnerResult:
    weights: np.ndarray          # (r+1, m)
    forcing_weights: np.ndarray | None  # (q+1, d)
    state: np.ndarray            # (p, d) cascade state at t = p
    mse: float
    prediction: np.ndarray       # (T, d)
    residuals: np.ndarray        # (T, d)
    condition: float = np.nan
    rank_deficient: bool = False


@dataclass
class FitReport:
    """Outcome of a fit.

    ``residuals[tau]`` belongs to trajectory index ``residual_start + tau``;
    ``state`` is the cascade state at the start of the prediction window
    (fitted or back-solved), needed to replay the residuals exactly.
    """

    model: CascadeModel
    mse: float
    residuals: ComplexSeries
    residual_start: int
    state: np.ndarray
    method: str
    converged: bool = True
    stable: bool = True
    trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    condition: float = np.nan
    n_evals: int = 0
    starts: list = field(default_factory=list)
    elapsed: float = 0.0
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "method": self.method, "p": self.model.p, "r": self.model.r, "mse": self.mse,
            "converged": self.converged, "stable": self.stable, "n_evals": self.n_evals,
            "condition": self.condition, "cascade": self.model.cascade.to_vector().tolist(),
            "elapsed_s": self.elapsed, "notes": list(self.notes),
        }


# ---------------------------------------------------------------- data setup

@dataclass
class RegressionData:
    """Aligned data for the regressions (see module docstring)."""

    X: np.ndarray                 # (N, d) states aligned with psi
    psi: PredictorSeries
    F: np.ndarray | None          # (N, d) aggregated forcing aligned with X
    p: int
    r: int
    q: int | None
    start: int                    # offset of X within the original trajectory

    @property
    def T(self) -> int:
        lead = 1 if self.q is None else max(1, self.q)
        return self.X.shape[0] - self.p - lead

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def target(self) -> np.ndarray:
        return self.X[self.p + 1:self.p + 1 + self.T]

    def lag_inputs(self, j: int, rows=slice(None)) -> np.ndarray:
        return self.psi.values[j:j + self.T, rows]

    def forcing_inputs(self, i: int, rows=slice(None)) -> np.ndarray:
        return self.F[self.p + i:self.p + i + self.T, rows]


def prepare(psi: PredictorSeries, x, orders: ModelOrders, forcing=None,
            forcing_order: int | None = None) -> RegressionData:
    X = x.values if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
    X = np.asarray(X, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    start = psi.start
    X = X[start:start + psi.n]
    if X.shape[0] != psi.n:
        raise ValueError(f"predictor series ({psi.n}) longer than the aligned data ({X.shape[0]})")
    if X.shape[1] != psi.d:
        raise ValueError(f"data dimension {X.shape[1]} != predictor rows {psi.d}")
    F = None
    if forcing_order is not None:
        if forcing is None:
            raise ValueError("shared forcing requested but no forcing series given")
        Fv = forcing.values if isinstance(forcing, ComplexSeries) else np.asarray(forcing)
        F = np.asarray(Fv, dtype=complex)[start:start + psi.n]
        if F.shape != X.shape:
            raise ValueError(f"forcing series shape {F.shape} does not cover the data {X.shape}")
    data = RegressionData(X, psi, F, orders.p, orders.r, forcing_order, start)
    if data.T < 1:
        raise ValueError(f"series of {X.shape[0]} samples too short for p={orders.p}")
    return data


# ---------------------------------------------------------------- inner solve

RANK_RTOL = 1e-12  # relative singular-value cutoff for rank decisions


def _ridge_lstsq(A: np.ndarray, y: np.ndarray, ridge: float):
    """Least squares with Tikhonov rows ``sqrt(lam) I``, ``lam = ridge * tr(A^H A) / ncols``.

    Returns ``(coef, rank, singular values of the unaugmented problem or None)``.
    """
    n = A.shape[1]
    if ridge > 0:
        lam = ridge * float(np.sum(np.abs(A) ** 2)) / n
        Aa = np.vstack([A, np.sqrt(lam) * np.eye(n)])
        ya = np.concatenate([y, np.zeros(n, dtype=y.dtype)])
        coef, _, rank, sv = sla.lstsq(Aa, ya, lapack_driver="gelsd", check_finite=False)
        return coef, rank, None
    coef, _, rank, sv = sla.lstsq(A, y, cond=RANK_RTOL, lapack_driver="gelsd",
                                  check_finite=False)
    return coef, rank, sv


def _condition(A: np.ndarray) -> float:
    if A.shape[1] == 0:
        return 1.0
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def inner_solve(coeffs: CascadeCoefficients, psi: PredictorSeries | RegressionData, x=None,
                cfg: FitConfig | None = None, forcing=None, diagnostics: bool = True,
                fixed_weights: tuple | None = None) -> InnerResult:
    """Optimal weights (and homogeneous ICs) for fixed cascade coefficients.

    The lag-shifted predictor blocks are filtered through the cascade from
    rest (zero-state response) and, with ``fit_internal_ics``, joined by the
    zero-input responses of each state slot; the ridge-regularized least
    squares problem in these regressors is solved row by row when predictor
    columns never feed two rows, jointly otherwise. Without fitted ICs the
    state reproducing ``X[1..p]`` is used and its response subtracted.

    ``fixed_weights=(b, c)`` skips the weight fit and solves for the ICs only.
    """
    if isinstance(psi, RegressionData):
        data = psi
        cfg = cfg or FitConfig(ModelOrders(data.p, data.r), forcing_order=data.q)
    else:
        if cfg is None:
            raise ValueError("cfg is required with a predictor series")
        data = prepare(psi, x, cfg.orders, forcing, cfg.forcing_order)
    p, r, q, d, T = data.p, data.r, data.q, data.d, data.T
    if coeffs.p != p:
        raise ValueError(f"cascade degree {coeffs.p} != p={p}")
    target = data.target()
    G = zero_input_basis(coeffs, T).T if p else np.zeros((T, 0))  # (T, p)
    fit_ics = cfg.fit_internal_ics
    if not fit_ics and p:
        st = init_from_history(coeffs, data.X[1:p + 1])
        target = target - G @ st.z
    psi_s = data.psi
    m = psi_s.m
    weights = np.zeros((r + 1, m), dtype=complex)
    fweights = None if q is None else np.zeros((q + 1, d), dtype=complex)
    state = np.zeros((p, d), dtype=complex) if fit_ics else \
        (init_from_history(coeffs, data.X[1:p + 1]).z if p else np.zeros((0, d), dtype=complex))
    pred = np.zeros((T, d), dtype=complex)
    cond = 1.0
    deficient = False

    if fixed_weights is not None:
        b, c = fixed_weights
        for k in range(d):
            zs = _zero_state_row(coeffs, data, k, b, c)
            if fit_ics and p:
                coef, _, _ = _ridge_lstsq(G.astype(complex), target[:, k] - zs, cfg.ridge)
                state[:, k] = coef
                zs = zs + G @ coef
            pred[:, k] = zs
        weights = np.asarray(b, dtype=complex)
        fweights = None if c is None else np.asarray(c, dtype=complex)
    elif psi_s.is_row_disjoint():
        cols = psi_s.columns
        for k in range(d):
            blocks, index = [], []
            for j in range(r + 1):
                Y = run_cascade(coeffs, data.lag_inputs(j, k))[0]  # (T, q_row)
                blocks.append(Y)
                index += [("b", j, int(cols[k, c])) for c in range(Y.shape[1])]
            if q is not None:
                Fk = np.stack([data.forcing_inputs(i, k) for i in range(q + 1)], axis=1)
                blocks.append(run_cascade(coeffs, Fk)[0])
                index += [("c", i, k) for i in range(q + 1)]
            if fit_ics and p:
                blocks.append(G)
                index += [("z", h, k) for h in range(p)]
            A = np.concatenate(blocks, axis=1) if blocks else np.zeros((T, 0))
            coef, ok_rank, cnd = _solve_columns(A, target[:, k], cfg, diagnostics)
            cond = max(cond, cnd)
            deficient |= not ok_rank
            pred[:, k] = A @ coef
            _scatter(coef, index, weights, fweights, state)
    else:
        dense = psi_s.dense()
        blocks, index = [], []
        for j in range(r + 1):
            Y = run_cascade(coeffs, dense[j:j + T])[0]  # (T, d, m)
            blocks.append(Y)
            index += [("b", j, c) for c in range(m)]
        if q is not None:
            for i in range(q + 1):
                Fi = data.forcing_inputs(i)
                YF = run_cascade(coeffs, Fi)[0]
                blocks.append(np.einsum("tk,kl->tkl", YF, np.eye(d)))
                index += [("c", i, k) for k in range(d)]
        if fit_ics and p:
            for h in range(p):
                blocks.append(np.einsum("t,kl->tkl", G[:, h], np.eye(d)))
                index += [("z", h, k) for k in range(d)]
        A = np.concatenate(blocks, axis=2).reshape(T * d, -1)
        coef, ok_rank, cnd = _solve_columns(A, target.reshape(-1), cfg, diagnostics)
        cond, deficient = cnd, not ok_rank
        pred = (A @ coef).reshape(T, d)
        _scatter(coef, index, weights, fweights, state)

    if not fit_ics and p:
        pred = pred + G @ state
    resid = data.target() - pred
    mse = float(np.mean(np.sum(np.abs(resid) ** 2, axis=1)))
    return InnerResult(weights, fweights, state, mse, pred, resid, cond, deficient)


def _zero_state_row(coeffs, data: RegressionData, k: int, b, c) -> np.ndarray:
    cols = data.psi.columns[k]
    drive = np.zeros(data.T, dtype=complex)
    for j in range(data.r + 1):
        drive += data.lag_inputs(j, k) @ np.asarray(b)[j, cols]
    if c is not None and data.q is not None:
        for i in range(data.q + 1):
            drive += data.forcing_inputs(i, k) * c[i, k]
    return run_cascade(coeffs, drive)[0]


def _solve_columns(A: np.ndarray, y: np.ndarray, cfg: FitConfig, diagnostics: bool):
    """Solve on the nonzero columns; zero columns get weight 0."""
    coef = np.zeros(A.shape[1], dtype=complex)
    live = np.flatnonzero(np.any(A != 0, axis=0))
    if live.size == 0:
        return coef, True, 1.0
    Al = A[:, live]
    sol, rank, sv = _ridge_lstsq(Al, y, cfg.ridge)
    full_rank = rank >= live.size
    cond = np.nan
    if cfg.ridge == 0:
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if not full_rank:
            raise IllConditionedError("rank-deficient regressors with ridge = 0", cond)
    elif diagnostics:
        cond = _condition(Al)
        if cond > cfg.cond_warn:
            warnings.warn(f"ill-conditioned regressors (condition number {cond:.3e}); "
                          "the ridge term keeps the solution finite", IllConditionedWarning,
                          stacklevel=3)
    coef[live] = sol
    return coef, full_rank, cond


def _scatter(coef, index, weights, fweights, state):
    for val, (kind, a, b) in zip(coef, index):
        if kind == "b":
            weights[a, b] = val
        elif kind == "c":
            fweights[a, b] = val
        else:
            state[a, b] = val


# ---------------------------------------------------------------- outer search

def project_to_triangle(alpha: float, beta: float, margin: float = 0.0):
    """Nearest point of the (shrunken) stability triangle."""
    top = 1.0 - margin
    if beta <= top and beta >= alpha - 1 + margin and beta >= -alpha - 1 + margin:
        return alpha, beta
    # vertices of the shrunken triangle
    vb = -1.0 + margin
    vx = 2.0 - 2.0 * margin
    verts = [np.array([-vx, top]), np.array([vx, top]), np.array([0.0, vb])]
    pt = np.array([alpha, beta])
    best, dist = None, np.inf
    for i in range(3):
        a_, b_ = verts[i], verts[(i + 1) % 3]
        e = b_ - a_
        s = np.clip(np.dot(pt - a_, e) / np.dot(e, e), 0.0, 1.0)
        cand = a_ + s * e
        dd = np.sum((cand - pt) ** 2)
        if dd < dist:
            best, dist = cand, dd
    return float(best[0]), float(best[1])


def _project_vector(theta: np.ndarray, p: int, margin: float) -> np.ndarray:
    out = np.array(theta, dtype=float)
    for i in range(p // 2):
        out[2 * i], out[2 * i + 1] = project_to_triangle(out[2 * i], out[2 * i + 1], margin)
    if p % 2:
        out[-1] = np.clip(out[-1], -1 + margin, 1 - margin)
    return out


def default_starts(p: int, n_starts: int | None = None) -> list[np.ndarray]:
    """Interior start points; stage ``i`` of start ``s`` uses the ``(s + i)``-th default pair."""
    s = p // 2
    n = len(DEFAULT_STARTS) if n_starts is None else n_starts
    starts = []
    for k in range(n):
        v = []
        for i in range(s):
            v.extend(DEFAULT_STARTS[(k + i) % len(DEFAULT_STARTS)])
        if p % 2:
            v.append(LINEAR_STARTS[k % len(LINEAR_STARTS)])
        starts.append(np.array(v, dtype=float))
    return starts


class _Objective:
    def __init__(self, data: RegressionData, cfg: FitConfig, scale: float):
        self.data, self.cfg, self.scale = data, cfg, scale
        self.history: list[float] = []
        self.best = (np.inf, None)

    def __call__(self, theta):
        p, margin = self.data.p, self.cfg.margin
        proj = _project_vector(theta, p, margin)
        coeffs = CascadeCoefficients.from_vector(proj, p, margin, check=False)
        try:
            res = inner_solve(coeffs, self.data, cfg=self.cfg, diagnostics=False)
            val = res.mse
        except (np.linalg.LinAlgError, ValueError):
            val = np.inf
        if not np.isfinite(val):
            val = 1e30
        val_pen = val + self.scale * float(np.sum((np.asarray(theta) - proj) ** 2))
        self.history.append(val_pen)
        if val_pen < self.best[0]:
            self.best = (val_pen, proj)
        return val_pen


def fit_nonlinear(psi: PredictorSeries, x, cfg: FitConfig, forcing=None) -> FitReport:
    """Constrained nonlinear least squares over the cascade coefficients.

    For each start point the optimizer (scipy's COBYQA trust-region method
    with bounds and the triangle inequalities as linear constraints) runs
    until its trust region shrinks below ``rtol`` or the per-start budget is
    spent. The best point over all starts is kept; the fit is flagged
    non-converged when no start terminated on the tolerance.
    """
    t0 = time.perf_counter()
    data = prepare(psi, x, cfg.orders, forcing, cfg.forcing_order)
    p = data.p
    n_par = 2 * p + (data.r + 1) * psi.values.shape[2] + (0 if data.q is None else data.q + 1)
    if data.T <= 10 * max(n_par, 1):
        raise ValueError(f"need N > 10 x parameters; have {data.T} samples for {n_par}")
    scale = float(np.mean(np.sum(np.abs(data.target()) ** 2, axis=1))) or 1.0
    trace_all, starts_info = [], []
    converged_any = p == 0
    if p == 0:
        best_theta = np.zeros(0)
        n_evals = 1
    else:
        G, h = triangle_constraints(p // 2, bool(p % 2), cfg.margin)
        lo = np.empty(p)
        hi = np.empty(p)
        for i in range(p // 2):
            lo[2 * i:2 * i + 2] = (-2 + cfg.margin, -1 + cfg.margin)
            hi[2 * i:2 * i + 2] = (2 - cfg.margin, 1 - cfg.margin)
        if p % 2:
            lo[-1], hi[-1] = -1 + cfg.margin, 1 - cfg.margin
        oc = cfg.optimizer
        starts = default_starts(p, oc.n_starts) if oc.default_starts else []
        starts += [np.asarray(s, dtype=float) for s in oc.starts]
        if not starts:
            starts = [np.zeros(p)]
        obj = _Objective(data, cfg, scale)
        # COBYQA's internal tolerances are absolute, so optimize an O(1) objective
        zero = CascadeCoefficients.from_vector(np.zeros(p), p, cfg.margin, check=False)
        norm = inner_solve(zero, data, cfg=cfg, diagnostics=False).mse
        norm = norm if np.isfinite(norm) and norm > 0 else 1.0

        def fun(theta):
            return obj(theta) / norm

        n_evals = 0
        for s0 in starts:
            s0 = _project_vector(s0, p, max(cfg.margin, 1e-3))
            before = len(obj.history)
            options = {"maxfev": oc.max_evals, "initial_tr_radius": oc.initial_radius,
                       "final_tr_radius": oc.rtol}
            method = "COBYQA"
            constraints = LinearConstraint(G, -np.inf, h)
            if oc.algorithm.lower() == "cobyla":
                method = "COBYLA"
                options = {"maxiter": oc.max_evals, "rhobeg": oc.initial_radius, "tol": oc.rtol}
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(fun, s0, method=method, bounds=Bounds(lo, hi),
                               constraints=constraints, options=options)
            used = len(obj.history) - before
            n_evals += used
            conv = bool(res.success) and used < oc.max_evals
            converged_any |= conv
            starts_info.append({"start": s0.tolist(), "theta": np.asarray(res.x).tolist(),
                                "fun": float(res.fun) * norm, "evals": used, "converged": conv,
                                "message": str(res.message)})
            log.info("start %s -> E'=%.6e (%d evals, converged=%s)", s0, res.fun * norm, used,
                     conv)
        best_theta = obj.best[1]
        trace_all = obj.history
    coeffs = CascadeCoefficients.from_vector(_project_vector(best_theta, p, cfg.margin), p,
                                             cfg.margin)
    res = inner_solve(coeffs, data, cfg=cfg, diagnostics=True)
    hist = np.asarray(trace_all if trace_all else [res.mse], dtype=float)
    trace = np.column_stack([hist, np.minimum.accumulate(hist)])
    model = CascadeModel(cfg.orders, coeffs, res.weights, psi.basis, data.d, psi.m,
                         res.forcing_weights)
    report = FitReport(
        model=model, mse=res.mse,
        residuals=ComplexSeries(res.residuals, _dt(x), "residuals"),
        residual_start=data.start + p + 1, state=res.state, method="nonlinear",
        converged=converged_any, stable=model.is_stable(), trace=trace,
        condition=res.condition, n_evals=n_evals, starts=starts_info,
        elapsed=time.perf_counter() - t0)
    if not converged_any:
        report.notes.append("no start reached the tolerance within the evaluation budget")
        log.warning("fit_nonlinear: returning best-so-far point, not converged")
    return report


def _dt(x) -> float:
    return x.dt if isinstance(x, ComplexSeries) else 1.0


# ---------------------------------------------------------------- linear route

def fit_linear(psi: PredictorSeries, x, orders: ModelOrders, forcing=None,
               forcing_order: int | None = None, ridge: float = 1e-8,
               margin: float = DEFAULT_MARGIN, fit_internal_ics: bool = True) -> FitReport:
    """Single regression of the multistep form for real ``a`` and complex ``b``.

    Fits ``X[t] + sum_i a_i X[t-p+i] = sum_j Psi[t-1-p+j] b_j (+ forcing)``
    with real and imaginary parts stacked as real observations, so ``a``
    stays real. ``A(z)`` is factored into cascade form by pairing conjugate
    roots; an unstable result is returned with ``stable=False``. Residuals of
    stable models come from the cascade predictor (ICs refit with ``a`` and
    ``b`` held fixed), those of unstable models from the one-step multistep
    form.
    """
    t0 = time.perf_counter()
    data = prepare(psi, x, orders, forcing, forcing_order)
    p, r, q, d, T = data.p, data.r, data.q, data.d, data.T
    if data.X.shape[0] <= p + r + 1:
        raise ValueError("series too short for the requested orders")
    m = psi.m
    cols = psi.columns
    # real unknowns: a (p) | Re/Im b_j[c] (2 (r+1) m) | Re/Im c_i[k] (2 (q+1) d)
    nb = 2 * (r + 1) * m
    nc = 0 if q is None else 2 * (q + 1) * d
    n = p + nb + nc
    gram = np.zeros((n, n))
    rhs = np.zeros(n)
    tgt = data.target()
    for k in range(d):
        comp, idx = [], []
        for i in range(p):
            comp.append(-data.X[1 + i:1 + i + T, k])
            idx.append(("a", i))
        for j in range(r + 1):
            L = data.lag_inputs(j, k)
            for c in range(L.shape[1]):
                comp.append(L[:, c])
                idx.append(("b", j * m + int(cols[k, c])))
        if q is not None:
            for i in range(q + 1):
                comp.append(data.forcing_inputs(i, k))
                idx.append(("c", i * d + k))
        Z = np.stack(comp, axis=1) if comp else np.zeros((T, 0), dtype=complex)
        # real design rows: [Re; Im]
        blocks_r, blocks_i, gidx = [], [], []
        for col, (kind, g) in enumerate(idx):
            z = Z[:, col]
            if kind == "a":
                blocks_r.append(z.real), blocks_i.append(z.imag), gidx.append(g)
            else:
                base = p + (g * 2 if kind == "b" else nb + 2 * g)
                blocks_r += [z.real, -z.imag]
                blocks_i += [z.imag, z.real]
                gidx += [base, base + 1]
        D = np.vstack([np.stack(blocks_r, axis=1), np.stack(blocks_i, axis=1)])
        yv = np.concatenate([tgt[:, k].real, tgt[:, k].imag])
        gidx = np.asarray(gidx)
        gram[np.ix_(gidx, gidx)] += D.T @ D
        rhs[gidx] += D.T @ yv
    live = np.flatnonzero(np.diag(gram) > 0)
    sol = np.zeros(n)
    g_live = gram[np.ix_(live, live)]
    lam = ridge * np.trace(g_live) / max(live.size, 1)
    cond = float(np.linalg.cond(g_live)) if live.size else 1.0
    if ridge == 0 and not np.isfinite(cond) or (ridge == 0 and cond > 1e15):
        raise IllConditionedError("singular normal equations with ridge = 0", np.sqrt(cond))
    sol[live] = sla.solve(g_live + lam * np.eye(live.size), rhs[live], assume_a="pos")
    a = sol[:p]
    bvec = sol[p:p + nb].reshape(r + 1, m, 2)
    b = bvec[..., 0] + 1j * bvec[..., 1]
    c = None
    if q is not None:
        cvec = sol[p + nb:].reshape(q + 1, d, 2)
        c = cvec[..., 0] + 1j * cvec[..., 1]
    coeffs = cascade_from_polynomial(a, margin) if p else CascadeCoefficients((), None, margin)
    stable = p == 0 or coeffs.is_stable(0.0)
    model = CascadeModel(orders, coeffs, b, psi.basis, d, m, c)
    notes = []
    cfg = FitConfig(orders, margin=margin, ridge=ridge, fit_internal_ics=fit_internal_ics,
                    forcing_order=forcing_order)
    if stable:
        res = inner_solve(coeffs, data, cfg=cfg, fixed_weights=(b, c))
        resid, state = res.residuals, res.state
    else:
        notes.append("A(z) has roots on or outside the unit circle; residuals from the "
                     "multistep one-step predictor")
        ar = sum(a[i] * data.X[1 + i:1 + i + T] for i in range(p)) if p else 0.0
        drive = np.zeros((T, d), dtype=complex)
        for j in range(r + 1):
            drive += data.psi.window(j, j + T).apply(b[j])
        if c is not None:
            for i in range(q + 1):
                drive += data.forcing_inputs(i) * c[i]
        resid = tgt - (drive - ar)
        state = np.zeros((p, d), dtype=complex)
        log.warning("fit_linear: unstable A(z) (flagged)")
    mse = float(np.mean(np.sum(np.abs(resid) ** 2, axis=1)))
    return FitReport(
        model=model, mse=mse, residuals=ComplexSeries(resid, _dt(x), "residuals"),
        residual_start=data.start + p + 1, state=state, method="linear", converged=True,
        stable=stable, trace=np.array([[mse, mse]]), condition=np.sqrt(cond), n_evals=1,
        elapsed=time.perf_counter() - t0, notes=notes)


def multistep_residuals(model: CascadeModel, psi: PredictorSeries, x, forcing=None) -> np.ndarray:
    """One-step residuals of the multistep form, driven by the data."""
    data = prepare(psi, x, model.orders, forcing, model.forcing_order)
    p, r, T = data.p, data.r, data.T
    a = model.a()
    ar = sum(a[i] * data.X[1 + i:1 + i + T] for i in range(p)) if p else 0.0
    drive = np.zeros((T, data.d), dtype=complex)
    for j in range(r + 1):
        drive += data.psi.window(j, j + T).apply(model.weights[j])
    if model.forcing_weights is not None:
        for i in range(model.forcing_order + 1):
            drive += data.forcing_inputs(i) * model.forcing_weights[i]
    return data.target() - (drive - ar)


def replay_residuals(model: CascadeModel, x, residuals, state: np.ndarray | None = None,
                     forcing=None, start: int | None = None):
    """Run the reduced model with recorded residuals in place of sampled noise.

    ``x`` is the data the model was fit to (its initial segment seeds the
    run) and ``residuals`` the fitted ones; pass the report's ``state`` to
    use the fitted initial conditions. Returns the reconstructed series,
    aligned with ``x[start:]``, where ``start`` defaults to the fit's
    alignment (the basis history depth).
    """
    from .sim import closed_loop

    X = x.values if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
    res = residuals.values if isinstance(residuals, ComplexSeries) else np.asarray(residuals)
    depth = 0 if model.basis is None else model.basis.lag_depth
    start = depth if start is None else start
    p = model.p
    n_steps = res.shape[0]
    init = X[start - depth:start + p + 1]
    F = None
    if model.forcing_weights is not None:
        Fv = forcing.values if isinstance(forcing, ComplexSeries) else np.asarray(forcing)
        F = np.asarray(Fv)[start:]
    path = closed_loop(model, init, n_steps, noise=res, state=state, forcing=F)
    return ComplexSeries(path, _dt(x), "replay")


def galerkin_residuals(x, basis) -> np.ndarray:
    """Residuals of the one-step Galerkin map ``x[n+1] - R(x[n])``."""
    from .predictors import galerkin_onestep

    X = x.values if isinstance(x, ComplexSeries) else np.asarray(x)
    R = galerkin_onestep(X[:-1], basis.delta, basis.kind, L=basis.L, nu=basis.nu)
    return X[1:] - R


def with_orders(cfg: FitConfig, p: int, r: int) -> FitConfig:
    return replace(cfg, orders=ModelOrders(p, r))
