#!/usr/bin/env python3
"""Run the simulated sweeps (exp1..exp7) and write one CSV per experiment."""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from wasncal.harness import PRESETS, export_csv, run_experiment

SIMULATED = [f"exp{k}" for k in range(1, 8)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--only", nargs="+", choices=SIMULATED, default=SIMULATED)
    ap.add_argument("--paper-scale", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.only:
        cfg = replace(PRESETS[name], seed=args.seed)
        if args.paper_scale:
            cfg = cfg.at_paper_scale()
        start = time.perf_counter()
        export_csv(run_experiment(cfg, threads=args.threads), out / f"{name}.csv")
        logging.info("%s: %d setups x %d trials in %.1f s", name, cfg.n_setups, cfg.n_trials, time.perf_counter() - start)


if __name__ == "__main__":
    main()
