"""Acceptance criteria 1-9.

Each test prints one ``[ACCEPT n] PASS|FAIL ...`` line. Criteria 6 and 7
integrate the full models at desk scale (datasets are cached under
``$WIENERROM_CACHE``); they are marked ``slow``. Run this file directly
with ``python3 tests/test_acceptance.py`` for the summary lines only.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import SYN_CASCADE, SYN_WEIGHTS, random_stable_cascade, synthetic_data  # noqa: E402
from wienerrom.cascade import cascade_run, multistep_run  # noqa: E402
from wienerrom.core import (ModelOrders, NoiseModel, cascade_roots, expand_cascade,  # noqa: E402
                            triangle_contains)
from wienerrom.evaluation import ancr, rmse  # noqa: E402
from wienerrom.fit import FitConfig, OptimizerConfig, fit_nonlinear  # noqa: E402
from wienerrom.models import make_stepper  # noqa: E402
from wienerrom.noise import covariance_oracle, default_grid, sample_paths  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    line = f"[ACCEPT {n}] {'PASS' if ok else 'FAIL'} {detail}"
    capman = getattr(report, "capman", None)
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


@pytest.fixture(autouse=True)
def _uncaptured(request):
    report.capman = request.config.pluginmanager.getplugin("capturemanager")
    yield


# ---------------------------------------------------------------- 1

def check_equivalence(n_models: int = 100, n_steps: int = 10_000, seed: int = 2024):
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(n_models):
        p = int(rng.choice([2, 4, 6]))
        r = int(rng.integers(0, p + 1))
        d = int(rng.integers(1, 4))
        m = 3
        c = random_stable_cascade(rng, p)
        psi = rng.standard_normal((n_steps, d, m)) + 1j * rng.standard_normal((n_steps, d, m))
        b = rng.standard_normal((r + 1, m)) + 1j * rng.standard_normal((r + 1, m))
        init = np.zeros((p, d))
        ms = multistep_run(ModelOrders(p, r), expand_cascade(c), b, psi, init).values
        cs = cascade_run(c, b, psi, init).values
        worst = max(worst, float(np.abs(ms - cs).max() / np.abs(ms).max()))
    return worst, time.perf_counter() - t0


def test_1_cascade_multistep_equivalence():
    worst, secs = check_equivalence()
    ok = worst < 1e-10 and secs < 60
    report(1, ok, f"max relative difference {worst:.2e} (< 1e-10), {secs:.1f} s (< 60 s)")
    assert ok


# ---------------------------------------------------------------- 2

def check_triangle(n: int = 100_000, seed: int = 7, edge: float = 1e-9):
    rng = np.random.default_rng(seed)
    al = rng.uniform(-3, 3, n)
    be = rng.uniform(-2, 2, n)
    comp = np.zeros((n, 2, 2))
    comp[:, 0, 0] = -al
    comp[:, 0, 1] = -be
    comp[:, 1, 0] = 1.0
    radius = np.abs(np.linalg.eigvals(comp)).max(axis=1)
    inside = np.array([triangle_contains(a, b) for a, b in zip(al, be)])
    dist = np.minimum.reduce([np.abs(1 - be), np.abs(be - al + 1), np.abs(be + al + 1)])
    dist = dist / np.sqrt(2)
    far = dist > edge
    mismatches = int(np.sum(inside[far] != (radius[far] < 1)))
    return mismatches, int(far.sum())


def test_2_triangle_root_duality():
    t0 = time.perf_counter()
    bad, checked = check_triangle()
    secs = time.perf_counter() - t0
    ok = bad == 0
    report(2, ok, f"{bad} disagreements among {checked} pairs away from the boundary "
                  f"({secs:.1f} s)")
    assert ok


# ---------------------------------------------------------------- 3

def check_identification(n: int = 80_000):
    _, x0 = synthetic_data(n=2000, noise=3e-4)
    sd = float(np.sqrt(np.mean(np.var(x0.real, axis=0))))
    noise = 1e-3 * sd  # variance 1e-6 relative to the signal
    true, x = synthetic_data(n=n, noise=noise)
    psi = true.basis.series(x)
    # the objective is flat along directions where b absorbs changes of A, so
    # even a tiny ridge shifts the optimum; the problem is well posed without it
    rep = fit_nonlinear(psi, x, FitConfig(ModelOrders(2, 2), ridge=0.0,
                                          optimizer=OptimizerConfig()))
    r_true = np.sort_complex(cascade_roots(true.cascade))
    r_fit = np.sort_complex(cascade_roots(rep.model.cascade))
    root_err = float(np.abs(r_true - r_fit).max())
    b_err = float(np.linalg.norm(rep.model.weights - SYN_WEIGHTS) / np.linalg.norm(SYN_WEIGHTS))
    return root_err, b_err, rep


def test_3_synthetic_identification():
    t0 = time.perf_counter()
    root_err, b_err, rep = check_identification()
    secs = time.perf_counter() - t0
    ok = root_err < 1e-2 and b_err < 1e-2 and secs < 300
    report(3, ok, f"root error {root_err:.2e}, relative b error {b_err:.2e} (both < 1e-2), "
                  f"fit {rep.model.cascade.pairs} vs {SYN_CASCADE}, {secs:.0f} s")
    assert ok


# ---------------------------------------------------------------- 5

def bump_model(M: int, width: float = np.pi / 3) -> NoiseModel:
    th = 2 * np.pi * np.arange(M) / M
    th = np.where(th > np.pi, th - 2 * np.pi, th)
    f = np.where(np.abs(th) < width, np.cos(0.5 * np.pi * th / width), 0.0)
    return NoiseModel(f.astype(complex)[:, None, None], real=True)


def check_sampler(n: int = 1_000_000, max_lag: int = 20, seed: int = 5):
    M = default_grid(n)
    model = bump_model(M)
    x = sample_paths(model, n, np.random.default_rng(seed), 1, grid=M)[0, :, 0]
    K = 400
    c = covariance_oracle(model, K + max_lag)[:, 0, 0]

    def at(k):
        k = abs(k)
        return c[k] if k < c.size else 0.0
    worst = 0.0
    for h in range(max_lag + 1):
        emp = float(np.mean(x[:n - h] * x[h:]))
        var = sum(at(k) ** 2 + at(k + h) * at(k - h) for k in range(-K, K + 1)) / n
        worst = max(worst, abs(emp - c[h]) / np.sqrt(var))
    z = (x - x.mean()) / x.std()
    kurt = float(np.mean(z ** 4) - 3.0)
    rho = c[:K] / c[0]
    se_k = float(np.sqrt(24.0 / n * (1 + 2 * np.sum(rho[1:] ** 4))))
    return worst, kurt / se_k


def test_5_noise_sampler_fidelity():
    t0 = time.perf_counter()
    worst, kz = check_sampler()
    secs = time.perf_counter() - t0
    ok = worst < 3 and abs(kz) < 3 and secs < 60
    report(5, ok, f"max ACF deviation {worst:.2f} SE (< 3), excess kurtosis {kz:+.2f} SE "
                  f"(|.| < 3), {secs:.1f} s")
    assert ok


# ---------------------------------------------------------------- 8

def test_8_metric_oracles():
    rng = np.random.default_rng(8)
    v = rng.standard_normal((20, 50, 5)) + 1j * rng.standard_normal((20, 50, 5))
    clim = v.real.mean(axis=(0, 1))
    r0 = float(np.abs(rmse(v, v)).max())
    a1 = ancr(v, v, clim).curve
    flipped = 2 * clim - v.real + 1j * v.imag
    am1 = ancr(v, flipped, clim).curve
    ok = r0 == 0 and np.allclose(a1, 1) and np.allclose(am1, -1)
    report(8, ok, f"max RMSE {r0:.1e} (== 0), ANCR range [{a1.min():.6f}, {a1.max():.6f}] "
                  f"(== 1), flipped [{am1.min():.6f}, {am1.max():.6f}] (== -1)")
    assert ok


# ---------------------------------------------------------------- 9

def check_etdrk4(n: int = 32, T: float = 0.5, steps=(32, 64, 128), ref: int = 512):
    k = np.arange(1, n + 1)
    u0 = np.exp(-0.5 * k) * (1 + 0.5j)

    def run(m):
        s = make_stepper("burgers", n, T / m, nu=0.05)
        u = u0.copy()
        for _ in range(m):
            u = s.step(u)
        return u
    truth = run(ref)
    errs = [np.linalg.norm(run(m) - truth) for m in steps]
    return float(-np.polyfit(np.log(steps), np.log(errs), 1)[0])


def test_9_etdrk4_order():
    t0 = time.perf_counter()
    slope = check_etdrk4()
    secs = time.perf_counter() - t0
    ok = abs(slope - 4.0) <= 0.2
    report(9, ok, f"self-convergence slope {slope:.3f} (4.0 +/- 0.2), {secs:.1f} s")
    assert ok


# ---------------------------------------------------------------- 4, 6

@pytest.fixture(scope="module")
def ks_result():
    from wienerrom.experiments import ks_desk_experiment

    t0 = time.perf_counter()
    res = ks_desk_experiment()
    res["elapsed"] = time.perf_counter() - t0
    return res


@pytest.mark.slow
def test_4_residual_replay(ks_result):
    err = ks_result["replay_rel_error"]
    ok = err < 1e-6
    report(4, ok, f"replay relative error over 1000 steps {err:.2e} (< 1e-6)")
    assert ok


def ks_checks(res: dict) -> dict:
    fr = res["free_run"]
    checks = {"a": bool(fr.get("bounded") and fr.get("stationary"))}
    e = res.get("energy_rel_diff")
    checks["b"] = e is not None and max(e) < 0.15
    acf = res.get("acf_max_abs_diff")
    checks["c"] = acf is not None and acf < 0.15
    fc = res["forecast"]
    checks["d"] = fc["max_ratio"] < 0.7
    checks["e"] = max(res["galerkin_rel_diff"]) > 0.5
    checks["runtime"] = res["elapsed"] < 7200
    return checks


@pytest.mark.slow
def test_6_ks_desk(ks_result):
    res = ks_result
    c = ks_checks(res)
    e = res.get("energy_rel_diff")
    detail = (f"(a) bounded/stationary {c['a']} {res['free_run']}; "
              f"(b) energy rel diff {np.round(e, 3).tolist() if e else None} (< 0.15); "
              f"(c) ACF max diff {res.get('acf_max_abs_diff')} (< 0.15; two independent "
              f"full runs differ by {res.get('acf_full_vs_valid_max_abs_diff'):.3f}); "
              f"(d) max RMSE/clim {res['forecast']['max_ratio']:.3f} (< 0.7); "
              f"(e) Galerkin max rel diff {max(res['galerkin_rel_diff']):.2f} (> 0.5); "
              f"{res['elapsed']:.0f} s")
    ok = all(c.values())
    report(6, ok, detail)
    assert ok, c


# ---------------------------------------------------------------- 7

@pytest.fixture(scope="module")
def burgers_result():
    from wienerrom.experiments import burgers_desk_experiment

    t0 = time.perf_counter()
    res = burgers_desk_experiment()
    res["elapsed"] = time.perf_counter() - t0
    return res


def burgers_checks(res: dict) -> dict:
    tr = res["tracking"]
    return {"a": tr["reduced"] < 0.2 and tr["reduced"] < tr["truncation"],
            "b": max(res["energy_rel_diff"]) < 0.15,
            "c": res["residual_spectrum_rel_diff"] < 0.10,
            "runtime": res["elapsed"] < 3600}


@pytest.mark.slow
def test_7_burgers_desk(burgers_result):
    res = burgers_result
    c = burgers_checks(res)
    tr = res["tracking"]
    detail = (f"(a) tracking error {tr['reduced']:.3f} (< 0.2, truncation {tr['truncation']:.3f}); "
              f"(b) energy rel diff max {max(res['energy_rel_diff']):.3f} (< 0.15); "
              f"(c) residual spectra band diff {res['residual_spectrum_rel_diff']:.3f} (< 0.10); "
              f"{res['elapsed']:.0f} s")
    ok = all(c.values())
    report(7, ok, detail)
    assert ok, c


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
