"""Command line interface: ``wasncal {simulate,calibrate,crlb,experiment,acoustic}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .analysis import crlb
from .estimator import SolverOptions, calibrate
from .geometry import ScenarioSpec, generate_scenario
from .harness import (
    PAPER_SCALE,
    PRESETS,
    ExperimentConfig,
    export_csv,
    run_acoustic_experiment,
    run_experiment,
)
from .measurement import MeasurementSet, NoiseSpec, build_covariances, corrupt, db_to_sigma

log = logging.getLogger("wasncal")


class CliError(Exception):
    pass


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("noise (standard deviations; *_db flags take 10*log10(sigma))")
    for name in ("r", "u", "s", "r_first"):
        flag = name.replace("_", "-")
        g.add_argument(f"--sigma-{flag}", type=float, dest=f"sigma_{name}")
        g.add_argument(f"--sigma-{flag}-db", type=float, dest=f"sigma_{name}_db")


def _noise(args, base: NoiseSpec) -> NoiseSpec:
    vals = {}
    for name in ("r", "u", "s", "r_first"):
        m = getattr(args, f"sigma_{name}", None)
        db = getattr(args, f"sigma_{name}_db", None)
        if m is not None and db is not None:
            raise CliError(f"give either --sigma-{name} or --sigma-{name}-db, not both")
        if m is not None:
            vals[f"sigma_{name}"] = m
        elif db is not None:
            vals[f"sigma_{name}"] = db_to_sigma(db)
    return replace(base, **vals)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--wls-iterations", type=int)
    p.add_argument("--regularization-eps", type=float)
    p.add_argument("--reference-emitter", type=int, help="0-based index, negative counts from the end")


def _solver(args, base: SolverOptions) -> SolverOptions:
    vals = {
        k: getattr(args, k)
        for k in ("wls_iterations", "regularization_eps", "reference_emitter")
        if getattr(args, k, None) is not None
    }
    return replace(base, **vals)


def _write_json(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> None:
    spec_vals = {
        k: v
        for k, v in {
            "M": args.M,
            "N": args.N,
            "D": args.D,
            "aperture": args.aperture,
            "new_sensor_range": args.range,
            "min_separation": args.min_separation,
            "seed": args.seed,
        }.items()
        if v is not None
    }
    spec = replace(ScenarioSpec(), **spec_vals)
    rng = np.random.default_rng(spec.seed)
    scenario = generate_scenario(spec, rng)
    noise = _noise(args, NoiseSpec())
    meas = corrupt(scenario, noise, rng)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_scenario(scenario, out / "scenario.json")
    io.save_measurements(meas, out / "measurements.json", noise)
    log.info("wrote %s and %s", out / "scenario.json", out / "measurements.json")


def _load_positions(path) -> tuple[np.ndarray, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    try:
        D = doc["dimension"]
        return (
            np.array(doc["sensors_m"], dtype=float).reshape(-1, D),
            np.array(doc["emitters_m"], dtype=float).reshape(-1, D),
        )
    except KeyError as err:
        raise CliError(f"{path}: positions file lacks {err}") from None


def cmd_calibrate(args) -> None:
    c = args.c
    if args.measurements:
        meas, stored = io.load_measurements(args.measurements)
        noise = _noise(args, stored or NoiseSpec())
    else:
        if not (args.tdoa_csv and args.positions):
            raise CliError("calibrate needs --measurements, or --tdoa-csv together with --positions")
        s, u = _load_positions(args.positions)
        tdoa = io.read_tdoa_csv(args.tdoa_csv, len(s), len(u))
        meas = MeasurementSet(c * tdoa, u, s)
        noise = _noise(args, NoiseSpec())
        if args.tdoa_noise_units == "s":
            first = None if noise.sigma_r_first is None else c * noise.sigma_r_first
            noise = replace(noise, sigma_r=c * noise.sigma_r, sigma_r_first=first)
    q = build_covariances(noise, meas.M, meas.N, meas.D)
    est = calibrate(meas, q, _solver(args, SolverOptions()), c)
    _write_json(io.estimate_to_dict(est), args.out)


def cmd_crlb(args) -> None:
    scenario = io.load_scenario(args.scenario)
    noise = _noise(args, NoiseSpec())
    rep = crlb(scenario, build_covariances(noise, scenario.M, scenario.N, scenario.D))
    _write_json(io.crlb_to_dict(rep, include_matrices=args.matrices), args.out)


def _experiment_config(args, default_preset: str) -> ExperimentConfig:
    cfg = PRESETS[args.preset or default_preset]
    if args.config:
        cfg = io.load_config(args.config, cfg)
    kw = {}
    if args.sweep_param:
        kw["swept_parameter"] = args.sweep_param
    if args.values:
        kw["sweep_values"] = tuple(args.values)
    if args.methods:
        kw["methods"] = tuple(args.methods)
    if args.paper_scale:
        kw["n_setups"], kw["n_trials"] = PAPER_SCALE
    if args.n_setups is not None:
        kw["n_setups"] = args.n_setups
    if args.n_trials is not None:
        kw["n_trials"] = args.n_trials
    if args.seed is not None:
        kw["seed"] = args.seed
    kw["noise"] = _noise(args, cfg.noise)
    kw["solver"] = _solver(args, cfg.solver)
    if getattr(args, "sample_rate", None) is not None:
        kw["acoustic"] = replace(cfg.acoustic, sample_rate=args.sample_rate)
    return replace(cfg, **kw)


def _report(result, out) -> None:
    if out:
        export_csv(result, out)
        log.info("wrote %s", out)
    else:
        export_csv(result, sys.stdout)


def cmd_experiment(args) -> None:
    cfg = _experiment_config(args, "exp1")
    _report(run_experiment(cfg, threads=args.threads), args.out)


def cmd_acoustic(args) -> None:
    cfg = _experiment_config(args, "exp8")
    _report(run_acoustic_experiment(cfg, threads=args.threads), args.out)


def _add_experiment_flags(p: argparse.ArgumentParser, presets) -> None:
    p.add_argument("--config", help="JSON experiment config (see docs/schema.md)")
    p.add_argument("--preset", choices=sorted(presets))
    p.add_argument("--sweep-param")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--n-setups", type=int)
    p.add_argument("--n-trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--paper-scale", action="store_true", help="N_s=32 setups, N_i=1000 trials")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    _add_noise_flags(p)
    _add_solver_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wasncal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a scenario and noisy measurements")
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--D", type=int)
    p.add_argument("--aperture", type=float)
    p.add_argument("--range", type=float, help="new-sensor range R in meters")
    p.add_argument("--min-separation", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    _add_noise_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate position and clock offset of the new sensor")
    p.add_argument("--measurements", help="measurement JSON")
    p.add_argument("--tdoa-csv", help="CSV with sensor_index,emitter_index,tdoa_seconds")
    p.add_argument("--positions", help="JSON with dimension, sensors_m and emitters_m")
    p.add_argument("--tdoa-noise-units", choices=("m", "s"), default="m")
    p.add_argument("--c", type=float, default=343.0)
    p.add_argument("--out")
    _add_noise_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("crlb", help="Cramer-Rao bound for a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--matrices", action="store_true", help="include Fisher and CRLB matrices")
    p.add_argument("--out")
    _add_noise_flags(p)
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("experiment", help="Monte Carlo sweep with injected TDOA noise")
    _add_experiment_flags(p, PRESETS)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("acoustic", help="Monte Carlo sweep with GCC-PHAT TDOAs from anechoic synthesis")
    _add_experiment_flags(p, PRESETS)
    p.add_argument("--sample-rate", type=float)
    p.set_defaults(func=cmd_acoustic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CliError, io.FormatError, OSError, ValueError, KeyError) as err:
        print(f"wasncal: error: {err}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as err:
        print(f"wasncal: numerical failure: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
