#!/usr/bin/env python3
"""Fit the KS reduced model at desk scale and print the check quantities.

Usage: python3 scripts/ks_desk.py [--config ks-desk] [--free-steps 100000] [--out ks.json]
"""
import argparse
import json
import logging

import numpy as np

from wienerrom.experiments import ks_desk_experiment
from wienerrom.io import load_config


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="ks-desk")
    ap.add_argument("--free-steps", type=int, default=100_000)
    ap.add_argument("--ens", type=int, default=100)
    ap.add_argument("--out", default=None, help="write the results as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    res = ks_desk_experiment(load_config(args.config), free_steps=args.free_steps, n_ens=args.ens)
    res.pop("fitted")
    for key in ("acf_full", "acf_reduced"):
        res.pop(key, None)
    fc = res["forecast"]
    print("fit:", res["fit"])
    print("replay relative error:", res["replay_rel_error"])
    print("free run:", res["free_run"])
    print("energy full    :", np.round(res["energy_full"], 4))
    print("energy reduced :", np.round(res.get("energy_reduced", []), 4))
    print("energy galerkin:", res["energy_galerkin"])
    print("ACF max abs diff:", res.get("acf_max_abs_diff"))
    print("forecast RMSE / climatological, max:", fc["max_ratio"], "pieces:", fc["pieces"])
    print("timings:", res["timings"])
    if args.out:
        with open(args.out, "w") as f:
            json.dump(_plain(res), f, indent=1)


if __name__ == "__main__":
    main()
