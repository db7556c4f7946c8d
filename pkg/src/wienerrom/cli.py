"""Command-line driver: simulate-full, fit, sweep, simulate-reduced, forecast, stats."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io as wio
from .core import ComplexSeries, InstabilityError, WienerROMError
from .evaluation import (ancr, climatological_rmse, compare_runs, efolding_lag, piece_starts,
                         rmse, rmse_imag)
from .sim import ensemble_forecast, simulate

log = logging.getLogger("wienerrom")


def physics_hash(cfg: dict) -> str:
    keys = ("kind", "n_modes", "L", "nu", "dt", "stride", "n_observed", "sigma")
    return wio.config_hash({k: cfg.get(k) for k in keys})


# ---------------------------------------------------------------- commands

def cmd_simulate_full(args) -> int:
    cfg = wio.load_config(args.config)
    if cfg.get("warning"):
        log.warning("%s: %s", cfg.get("name", args.config), cfg["warning"])
    if args.steps is not None and args.steps < 1:
        raise SystemExit("error: --steps must be >= 1")
    seed = args.seed if args.seed is not None else ex.default_seed(cfg["model"].get("seed", 0))
    pde = ex.pde_config(cfg, steps=args.steps, seed=seed,
                        burn_in_steps=args.burn_in, record_raw=args.raw_forcing)
    try:
        rec = ex.generate_trajectory(pde, progress=True)
    except InstabilityError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    extra = {"run_config": cfg, "run_config_hash": wio.config_hash(cfg),
             "physics_hash": physics_hash(pde.to_dict()), "role": "full"}
    ds = ex.save_record(args.out, rec, extra)
    if args.csv:
        wio.export_csv(args.csv, ds.observed)
    print(json.dumps({"dataset": str(args.out), "N": ds.observed.n, "d": ds.observed.d,
                      "dt": ds.observed.dt, "config_hash": ds.header["config_hash"]}))
    return 0


def _parse_sweep(spec: str):
    """``"p=1..4 r=0..p"`` -> list of (p, r)."""
    m = re.fullmatch(r"\s*p=(\d+)\.\.(\d+)\s+r=(\d+)\.\.(p|\d+)\s*", spec)
    if not m:
        raise SystemExit(f"error: cannot parse sweep {spec!r}; expected like 'p=1..4 r=0..p'")
    p0, p1, r0, r1 = int(m[1]), int(m[2]), int(m[3]), m[4]
    return [(p, r) for p in range(p0, p1 + 1)
            for r in range(r0, (p if r1 == "p" else min(int(r1), p)) + 1)]


def _fit_config_from_args(args) -> dict:
    cfg = wio.load_config(args.config)
    cfg.setdefault("fit", {})
    if args.method:
        cfg["fit"]["method"] = args.method
    return cfg


def _provenance(ds: ex.Dataset, cfg: dict, extra: dict | None = None) -> dict:
    prov = {"inputs": {"dataset": ds.header.get("config_hash")},
            "physics_hash": ds.header.get("physics_hash", physics_hash(ds.header["config"])),
            "fit_config_hash": wio.config_hash(cfg), "code_version": wio.code_version()}
    prov.update(extra or {})
    return prov


def _free_run_bounded(fm: ex.FittedModel, ds: ex.Dataset, n_steps: int, seed: int) -> bool:
    x = ds.observed.values
    need = fm.basis.lag_depth + fm.model.p + 1
    F = None
    if fm.model.forcing_weights is not None:
        rng = np.random.default_rng(seed + 1)
        F = white_forcing(rng, n_steps + need + 8, ds)
    try:
        run = simulate(fm.model, fm.noise, x[:need], n_steps, np.random.default_rng(seed),
                       forcing=F, dt=ds.observed.dt)
    except (InstabilityError, FloatingPointError):
        return False
    return bool(np.all(np.isfinite(run.values)) and
                np.abs(run.values).max() < 10 * np.abs(x).max())


def white_forcing(rng: np.random.Generator, n: int, ds: ex.Dataset) -> np.ndarray:
    """Fresh aggregated forcing with the same active modes as the recorded one."""
    active = np.any(ds.forcing_agg.values != 0, axis=0)
    w = (rng.standard_normal((n, active.size)) + 1j * rng.standard_normal((n, active.size)))
    return w / np.sqrt(2.0) * active


def cmd_fit(args) -> int:
    cfg = _fit_config_from_args(args)
    ds = ex.load_dataset(args.dataset)
    if args.sweep:
        return _sweep(args, cfg, ds)
    fm = ex.fit_dataset(ds, cfg, p=args.p, r=args.r)
    rep = fm.report
    prov = _provenance(ds, cfg, {"method": rep.method})
    wio.save_model(args.out, rep.model, fm.noise, prov)
    summary = rep.summary()
    summary.update({"converged": rep.converged, "stable": rep.stable, "provenance": prov})
    if not rep.converged or not rep.stable:
        summary["flag"] = "NOT CONVERGED" if not rep.converged else "UNSTABLE"
        log.warning("fit flagged: %s", summary["flag"])
    report_path = args.report or str(Path(args.out).with_suffix(".report.json"))
    wio.save_json(report_path, {"summary": summary, "trace": rep.trace.tolist(),
                                "starts": rep.starts})
    print(json.dumps({k: summary[k] for k in ("method", "p", "r", "mse", "converged", "stable")}))
    return 0


def _sweep(args, cfg: dict, ds: ex.Dataset) -> int:
    rows = []
    for p, r in _parse_sweep(args.sweep):
        try:
            fm = ex.fit_dataset(ds, cfg, p=p, r=r)
        except (ValueError, WienerROMError) as e:
            rows.append({"p": p, "r": r, "mse": None, "bounded": None, "error": str(e)})
            continue
        bounded = _free_run_bounded(fm, ds, args.check_steps, ex.default_seed(0)) \
            if fm.report.stable else False
        rows.append({"p": p, "r": r, "mse": fm.report.mse, "converged": fm.report.converged,
                     "stable": fm.report.stable, "bounded": bounded})
        print(f"p={p} r={r} E'={fm.report.mse:.6e} bounded={bounded}", flush=True)
    out = args.out if args.out.endswith(".json") else args.out + ".json"
    wio.save_json(out, {"sweep": rows, "provenance": _provenance(ds, cfg)})
    csv_path = Path(out).with_suffix(".csv")
    with open(csv_path, "w") as fh:
        fh.write("p,r,mse,converged,stable,bounded\n")
        for row in rows:
            fh.write(f"{row['p']},{row['r']},{row.get('mse')},{row.get('converged')},"
                     f"{row.get('stable')},{row.get('bounded')}\n")
    return 0


def cmd_sweep(args) -> int:
    args.sweep = args.sweep or "p=1..4 r=0..p"
    return cmd_fit(args)


def _load_model_for(model_path, ds: ex.Dataset):
    model, noise, prov = wio.load_model(model_path)
    if model.state_dim != ds.observed.d:
        raise SystemExit(f"error: model state dimension {model.state_dim} != dataset "
                         f"dimension {ds.observed.d}")
    return model, noise, prov


def cmd_simulate_reduced(args) -> int:
    if args.steps < 1:
        raise SystemExit("error: --steps must be >= 1")
    ds = ex.load_dataset(args.dataset)
    model, noise, prov = _load_model_for(args.model, ds)
    seed = args.seed if args.seed is not None else ex.default_seed(0)
    rng = np.random.default_rng(seed)
    need = model.basis.lag_depth + model.p + 1
    x = ds.observed.values
    start = args.start
    F = None
    if model.forcing_weights is not None:
        if args.recorded_forcing:
            F = ds.forcing_agg.values[start + model.basis.lag_depth:]
        else:
            F = white_forcing(np.random.default_rng(seed + 1), args.steps + need + 8, ds)
    if args.zero_noise:
        noise = None
    run = simulate(model, noise, x[start:start + need], args.steps, rng, forcing=F,
                   dt=ds.observed.dt)
    header = {"config": ds.header["config"], "config_hash": wio.config_hash(
                  {"model": prov, "seed": seed, "steps": args.steps}),
              "seed": seed, "dt": ds.observed.dt, "d": run.d, "N": run.n, "label": "reduced",
              "role": "reduced", "physics_hash": prov.get("physics_hash"),
              "inputs": {"model": prov, "dataset": ds.header.get("config_hash")}}
    wio.write_dataset(args.out, {"observed": run.values}, header)
    if args.csv:
        wio.export_csv(args.csv, run)
    print(json.dumps({"dataset": str(args.out), "N": run.n, "seed": seed}))
    return 0


def cmd_forecast(args) -> int:
    ds = ex.load_dataset(args.dataset)
    model, noise, prov = _load_model_for(args.model, ds)
    if args.zero_noise:
        noise = None
    x = ds.observed.values
    dt = ds.observed.dt
    horizon = int(round(args.horizon / dt))
    if horizon < 1:
        raise SystemExit("error: horizon shorter than one observation interval")
    m = max(2 * model.p + 1, model.basis.lag_depth + model.p + 1)
    gap = args.gap if args.gap else 5 * efolding_lag(x)
    starts = piece_starts(x.shape[0], horizon, m, gap, args.pieces)
    if starts.size == 0:
        raise SystemExit("error: dataset too short for one forecast piece")
    rng = np.random.default_rng(args.seed if args.seed is not None else ex.default_seed(0))
    inits = np.stack([x[s:s + m] for s in starts])
    truth = np.stack([x[s + m:s + m + horizon] for s in starts])
    if model.forcing_weights is not None:
        means, q05, q95 = [], [], []
        for s in starts:
            fc = ensemble_forecast(model, noise, x[s:s + m], args.ens, horizon, rng,
                                   forcing=ds.forcing_agg.values[s + m - model.p - 1:],
                                   keep_members=False)
            means.append(fc.mean), q05.append(fc.q05), q95.append(fc.q95)
        mean, lo, hi = np.stack(means), np.stack(q05), np.stack(q95)
    else:
        fc = ensemble_forecast(model, noise, inits, args.ens, horizon, rng, keep_members=False)
        mean, lo, hi = fc.mean, fc.q05, fc.q95
    clim = x.real.mean(axis=0)
    curve = rmse(truth, mean)
    ac = ancr(truth, mean, clim)
    lead = dt * np.arange(1, horizon + 1)
    prefix = Path(args.out)
    table = np.column_stack([lead, curve, rmse_imag(truth, mean), ac.curve,
                             climatological_rmse(truth, clim)])
    np.savetxt(str(prefix) + ".csv", table, delimiter=",", comments="",
               header="lead,rmse_re,rmse_im,ancr,rmse_climatology", fmt="%.10g")
    bands = np.column_stack([lead, lo[0].real, hi[0].real, mean[0].real, truth[0].real])
    d = x.shape[1]
    hdr = ["lead"] + [f"{w}_re_u{k + 1}" for w in ("q05", "q95", "mean", "truth")
                      for k in range(d)]
    np.savetxt(str(prefix) + ".bands.csv", bands, delimiter=",", comments="",
               header=",".join(hdr), fmt="%.10g")
    summary = {"pieces": int(starts.size), "gap": int(gap), "n_ens": args.ens,
               "horizon_steps": horizon, "rmse_final": float(curve[-1]),
               "ancr_final": float(ac.curve[-1]), "ancr_skipped": ac.skipped.tolist(),
               "provenance": {"inputs": {"model": prov, "dataset": ds.header.get("config_hash")}}}
    wio.save_json(str(prefix) + ".json", summary)
    print(json.dumps({k: summary[k] for k in ("pieces", "rmse_final", "ancr_final")}))
    return 0


def cmd_stats(args) -> int:
    ha, sa = wio.load_series(args.run_a)
    hb, sb = wio.load_series(args.run_b)
    pa, pb = ha.get("physics_hash"), hb.get("physics_hash")
    if pa is None:
        pa = physics_hash(ha["config"]) if "config" in ha else None
    if pb is None:
        pb = physics_hash(hb["config"]) if "config" in hb else None
    if pa != pb and not args.force:
        raise SystemExit(f"error: runs have different provenance ({pa} vs {pb}); "
                         "pass --force to compare anyway")
    if sa.d != sb.d:
        raise SystemExit(f"error: dimension mismatch: A has d={sa.d}, B has d={sb.d}")
    which = tuple(w.strip() for w in args.which.split(",") if w.strip())
    rep = compare_runs(sa, sb, which=which, max_lag=int(round(args.max_lag / sa.dt)),
                       labels=(Path(args.run_a).stem, Path(args.run_b).stem))
    prefix = str(args.out)
    _write_tables(prefix, rep, sa.dt)
    summary = {"labels": list(rep.labels), "summary": rep.summary,
               "provenance": {"inputs": [ha.get("config_hash"), hb.get("config_hash")],
                              "forced": bool(args.force and pa != pb)}}
    wio.save_json(prefix + ".json", summary)
    print(json.dumps(rep.summary, default=float))
    return 0


def _write_tables(prefix: str, rep, dt: float) -> None:
    t = rep.tables
    if "acf" in t:
        a, b = t["acf"]["a"], t["acf"]["b"]
        d = a.shape[1]
        data = np.column_stack([t["acf"]["lag"] * dt, a, b])
        hdr = ["lag"] + [f"A_re_u{k + 1}" for k in range(d)] + [f"B_re_u{k + 1}" for k in range(d)]
        np.savetxt(prefix + ".acf.csv", data, delimiter=",", header=",".join(hdr), comments="")
    if "ccf" in t:
        a, b = t["ccf"]["a"], t["ccf"]["b"]
        d = a.shape[1]
        cols, hdr = [t["ccf"]["lag"] * dt], ["lag"]
        for i in range(d):
            for j in range(d):
                cols += [a[:, i, j], b[:, i, j]]
                hdr += [f"A_e{i + 1}e{j + 1}", f"B_e{i + 1}e{j + 1}"]
        np.savetxt(prefix + ".ccf.csv", np.column_stack(cols), delimiter=",",
                   header=",".join(hdr), comments="")
    if "marginal" in t:
        with open(prefix + ".marginal.csv", "w") as fh:
            fh.write("mode,center,A_density,A_err,B_density,B_err\n")
            for k, (ha, hb) in enumerate(t["marginal"]):
                for c, da, ea, db, eb in zip(ha.centers, ha.density, ha.stderr, hb.density,
                                             hb.stderr):
                    fh.write(f"{k + 1},{c:.10g},{da:.10g},{ea:.10g},{db:.10g},{eb:.10g}\n")
    if "spectrum" in t:
        ea, eb = t["spectrum"]["a"], t["spectrum"]["b"]
        k = np.arange(1, ea.mean.size + 1)
        np.savetxt(prefix + ".spectrum.csv", np.column_stack([k, ea.mean, ea.stderr, eb.mean,
                                                              eb.stderr]),
                   delimiter=",", header="mode,A_energy,A_se,B_energy,B_se", comments="")
    if "powerspec" in t:
        ps = t["powerspec"]
        d = ps["a"].shape[1]
        hdr = ["theta"] + [f"A_S{k + 1}" for k in range(d)] + [f"B_S{k + 1}" for k in range(d)]
        np.savetxt(prefix + ".powerspec.csv", np.column_stack([ps["freqs"], ps["a"], ps["b"]]),
                   delimiter=",", header=",".join(hdr), comments="")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wienerrom", description=__doc__)
    ap.add_argument("--threads", type=int, default=None,
                    help="cap on worker threads (default: $WIENERROM_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-full", help="integrate the full model and write a dataset")
    s.add_argument("config", help="YAML config path or preset name")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, help="recorded integrator steps (overrides config)")
    s.add_argument("--burn-in", type=int, dest="burn_in")
    s.add_argument("--seed", type=int)
    s.add_argument("--raw-forcing", action="store_true", help="also store every forcing draw")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_simulate_full)

    for name, func in (("fit", cmd_fit), ("sweep", cmd_sweep)):
        s = sub.add_parser(name, help="fit a reduced model" if name == "fit"
                           else "order sweep (tabulates E' and boundedness)")
        s.add_argument("dataset")
        s.add_argument("--config", required=True)
        s.add_argument("--method", choices=["nonlinear", "linear"])
        s.add_argument("--p", type=int)
        s.add_argument("--r", type=int)
        s.add_argument("--sweep", help="e.g. 'p=1..4 r=0..p'")
        s.add_argument("--check-steps", type=int, default=10000, dest="check_steps")
        s.add_argument("--out", required=True)
        s.add_argument("--report")
        s.set_defaults(func=func)

    s = sub.add_parser("simulate-reduced", help="free run of a fitted model")
    s.add_argument("model")
    s.add_argument("dataset", help="supplies the initial segment (and forcing)")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--zero-noise", action="store_true")
    s.add_argument("--recorded-forcing", action="store_true",
                   help="drive a shared-forcing model with the dataset's forcing")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_simulate_reduced)

    s = sub.add_parser("forecast", help="ensemble forecasts with RMSE/ANCR")
    s.add_argument("model")
    s.add_argument("dataset")
    s.add_argument("--ens", type=int, default=100)
    s.add_argument("--horizon", type=float, required=True, help="lead time in time units")
    s.add_argument("--pieces", type=int)
    s.add_argument("--gap", type=int, help="piece spacing in samples (default 5 e-folding lags)")
    s.add_argument("--seed", type=int)
    s.add_argument("--zero-noise", action="store_true")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("stats", help="compare statistics of two runs")
    s.add_argument("run_a")
    s.add_argument("run_b")
    s.add_argument("--which", default="acf,ccf,marginal,spectrum,powerspec")
    s.add_argument("--max-lag", type=float, default=10.0, help="in time units")
    s.add_argument("--force", action="store_true")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or (int(os.environ[ex.THREADS_ENV])
                               if os.environ.get(ex.THREADS_ENV) else None)
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except wio.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (WienerROMError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
