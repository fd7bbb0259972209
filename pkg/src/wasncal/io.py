"""File formats: JSON documents for scenarios, measurements, estimates, bound
reports and experiment configs, plus a CSV importer for external TDOAs.

Field names are documented in ``docs/schema.md``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .analysis import CrlbReport
from .estimator import CalibrationEstimate, SolverOptions
from .geometry import Scenario, ScenarioSpec
from .harness import AcousticSettings, ExperimentConfig
from .measurement import MeasurementSet, NoiseSpec, db_to_sigma

SCENARIO_KIND = "wasncal.scenario"
MEASUREMENT_KIND = "wasncal.measurements"
ESTIMATE_KIND = "wasncal.estimate"
CRLB_KIND = "wasncal.crlb"
SCHEMA_VERSION = 1


class FormatError(ValueError):
    pass


def _dump(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _load(path, kind: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")
    if doc.get("version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")
    return doc


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "kind": SCENARIO_KIND,
        "version": SCHEMA_VERSION,
        "dimension": sc.D,
        "c_m_per_s": sc.c,
        "tau_p_s": sc.tau_p,
        "sensors_m": sc.sensors.tolist(),
        "emitters_m": sc.emitters.tolist(),
        "new_sensor_m": sc.new_sensor.tolist(),
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        sc = Scenario(
            np.array(doc["sensors_m"], dtype=float).reshape(-1, doc["dimension"]),
            np.array(doc["emitters_m"], dtype=float).reshape(-1, doc["dimension"]),
            np.array(doc["new_sensor_m"], dtype=float),
            doc["tau_p_s"],
            doc["c_m_per_s"],
        )
    except KeyError as err:
        raise FormatError(f"scenario is missing field {err}") from None
    return sc


def save_scenario(sc: Scenario, path) -> None:
    _dump(scenario_to_dict(sc), path)


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_load(path, SCENARIO_KIND))


def measurements_to_dict(meas: MeasurementSet, noise: NoiseSpec | None = None) -> dict:
    doc = {
        "kind": MEASUREMENT_KIND,
        "version": SCHEMA_VERSION,
        "dimension": meas.D,
        "range_differences_m": meas.r_tilde.tolist(),
        "emitters_m": meas.u_tilde.tolist(),
        "sensors_m": meas.s_tilde.tolist(),
    }
    if noise is not None:
        doc["noise_m"] = asdict(noise)
    return doc


def load_measurements(path) -> tuple[MeasurementSet, NoiseSpec | None]:
    doc = _load(path, MEASUREMENT_KIND)
    D = doc["dimension"]
    meas = MeasurementSet(
        np.array(doc["range_differences_m"], dtype=float),
        np.array(doc["emitters_m"], dtype=float).reshape(-1, D),
        np.array(doc["sensors_m"], dtype=float).reshape(-1, D),
    )
    noise = NoiseSpec(**doc["noise_m"]) if "noise_m" in doc else None
    return meas, noise


def save_measurements(meas: MeasurementSet, path, noise: NoiseSpec | None = None) -> None:
    _dump(measurements_to_dict(meas, noise), path)


def read_tdoa_csv(path, M: int, N: int) -> np.ndarray:
    """Read ``sensor_index,emitter_index,tdoa_seconds`` rows (0-based) into an (M, N) matrix.

    Every (sensor, emitter) pair must appear exactly once.
    """
    out = np.full((M, N), np.nan)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"sensor_index", "emitter_index", "tdoa_seconds"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise FormatError(f"{path}: header must contain {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            i, j = int(row["sensor_index"]), int(row["emitter_index"])
            if not (0 <= i < M and 0 <= j < N):
                raise FormatError(f"{path}:{line}: index ({i}, {j}) outside {M}x{N}")
            if not np.isnan(out[i, j]):
                raise FormatError(f"{path}:{line}: duplicate entry for ({i}, {j})")
            out[i, j] = float(row["tdoa_seconds"])
    if np.isnan(out).any():
        missing = np.argwhere(np.isnan(out))[0]
        raise FormatError(f"{path}: no TDOA for sensor {missing[0]}, emitter {missing[1]}")
    return out


def write_tdoa_csv(path, tdoas: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_index", "emitter_index", "tdoa_seconds"])
        for (i, j), v in np.ndenumerate(tdoas):
            w.writerow([i, j, repr(float(v))])


def estimate_to_dict(est: CalibrationEstimate) -> dict:
    return {
        "kind": ESTIMATE_KIND,
        "version": SCHEMA_VERSION,
        "position_m": est.p_hat.tolist(),
        "offset_m": est.r_p_hat,
        "offset_s": est.tau_p_hat,
        "c_m_per_s": est.c,
        "method": est.method,
        "iterations_used": est.iterations_used,
        "psi_condition": None if not np.isfinite(est.psi_condition) else est.psi_condition,
        "status": est.status,
    }


def crlb_to_dict(rep: CrlbReport, include_matrices: bool = False) -> dict:
    doc = {
        "kind": CRLB_KIND,
        "version": SCHEMA_VERSION,
        "gamma_variance_bounds": rep.gamma_bounds.tolist(),
        "rmse_loc_bound_m": rep.rmse_loc_bound,
        "rmse_syn_bound_s": rep.rmse_syn_bound,
        "fisher_condition": rep.condition,
        "reliable": rep.reliable,
    }
    if include_matrices:
        doc["fisher"] = rep.fisher.tolist()
        doc["crlb"] = rep.crlb.tolist()
    return doc


# ---------------------------------------------------------------------------
# experiment configs


def _noise_from_doc(doc: dict, base: NoiseSpec) -> NoiseSpec:
    vals = asdict(base)
    for key in ("sigma_r", "sigma_u", "sigma_s", "sigma_r_first"):
        if key in doc:
            vals[key] = doc[key]
        if key + "_db" in doc:
            vals[key] = None if doc[key + "_db"] is None else db_to_sigma(doc[key + "_db"])
    return NoiseSpec(**vals)


def _pick(cls, doc: dict, base):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise FormatError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    vals = asdict(base)
    vals.update(doc)
    for k, v in vals.items():
        if isinstance(v, list):
            vals[k] = tuple(v)
    return cls(**vals)


def config_from_dict(doc: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config; keys absent from ``doc`` keep the value from ``base``."""
    base = base or ExperimentConfig()
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - top
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for key in ("swept_parameter", "n_setups", "n_trials", "seed"):
        if key in doc:
            kw[key] = doc[key]
    if "sweep_values" in doc:
        kw["sweep_values"] = tuple(float(v) for v in doc["sweep_values"])
    if "methods" in doc:
        kw["methods"] = tuple(doc["methods"])
    kw["scenario"] = _pick(ScenarioSpec, doc.get("scenario", {}), base.scenario)
    kw["noise"] = _noise_from_doc(doc.get("noise", {}), base.noise)
    kw["solver"] = _pick(SolverOptions, doc.get("solver", {}), base.solver)
    kw["acoustic"] = _pick(AcousticSettings, doc.get("acoustic", {}), base.acoustic)
    return replace(base, **kw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = asdict(cfg)
    doc["sweep_values"] = list(cfg.sweep_values)
    doc["methods"] = list(cfg.methods)
    return json.loads(json.dumps(doc))


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text()), base)
