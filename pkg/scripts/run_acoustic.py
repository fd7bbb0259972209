#!/usr/bin/env python3
"""Anechoic acoustic sweep over aperture with GCC-PHAT TDOAs.

Prints the TDOA error statistics per aperture and writes the RMSE table.
``--wav`` additionally stores the recordings of the first setup at the
first aperture as a multichannel 32-bit float WAV file.
"""

import argparse
from dataclasses import replace

import numpy as np

from wasncal import acoustics
from wasncal.harness import PRESETS, apply_sweep, export_csv, generate_room_scenario, run_acoustic_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="exp8.csv")
    ap.add_argument("--apertures", type=float, nargs="+")
    ap.add_argument("--n-setups", type=int)
    ap.add_argument("--n-trials", type=int)
    ap.add_argument("--sample-rate", type=float, default=48_000.0)
    ap.add_argument("--paper-scale", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--wav", help="write the first setup's recordings here")
    args = ap.parse_args()

    cfg = replace(PRESETS["exp8"], seed=args.seed)
    if args.paper_scale:
        cfg = cfg.at_paper_scale()
    kw = {"acoustic": replace(cfg.acoustic, sample_rate=args.sample_rate)}
    if args.apertures:
        kw["sweep_values"] = tuple(args.apertures)
    if args.n_setups:
        kw["n_setups"] = args.n_setups
    if args.n_trials:
        kw["n_trials"] = args.n_trials
    cfg = replace(cfg, **kw)

    res = run_acoustic_experiment(cfg, threads=args.threads)
    fs = cfg.acoustic.sample_rate
    print("aperture_m  tdoa_rms_samples  tdoa_max_samples  flagged  " + "  ".join(f"{m}_mm" for m in cfg.methods))
    for k, value in enumerate(cfg.sweep_values):
        err = res.extras[k]["tdoa_errors"] * fs
        rmse = "  ".join(f"{res.cells[(m, k)].rmse_loc * 1e3:8.3f}" for m in cfg.methods)
        rms = np.sqrt(np.mean(err**2)) if err.size else np.nan
        peak = np.abs(err).max() if err.size else np.nan
        print(f"{value:10.2f}  {rms:16.4f}  {peak:16.4f}  {res.extras[k]['tdoa_flagged']:7d}  {rmse}")
    export_csv(res, args.out)

    if args.wav:
        spec, _ = apply_sweep(cfg, cfg.sweep_values[0])
        sc = generate_room_scenario(spec, np.random.default_rng([cfg.seed, 0, 0]), cfg.acoustic.room, cfg.acoustic.wall_margin)
        rng = np.random.default_rng([cfg.seed, 2, 0, 0])
        sig = acoustics.white_noise(cfg.acoustic.signal_duration, fs, rng)
        rec = acoustics.synthesize_anechoic(sc, sig, fs, rng, max_offset=max(map(abs, spec.offset_interval)))
        acoustics.write_wav(args.wav, rec)


if __name__ == "__main__":
    main()
