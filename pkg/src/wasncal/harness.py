"""Monte Carlo experiment engine.

Every random draw is keyed by indices, never by execution order:
geometric setup ``k`` uses the stream ``(seed, 0, k)`` and noise trial ``t``
of that setup uses ``(seed, 1, k, t)``. The same setups and the same
standard-normal noise draws are therefore reused at every sweep value, and
results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import acoustics
from .analysis import crlb, wls_theoretical_covariance
from .estimator import SingularPsiError, SolverOptions, iterate_estimates
from .geometry import PlacementError, Scenario, ScenarioSpec, generate_scenario, validate_geometry
from .measurement import MeasurementSet, NoiseSpec, build_covariances, corrupt, db_to_sigma, true_tdoas

SWEEPABLE = ("sigma_r", "sigma_u", "sigma_s", "sigma_r_first", "N", "M", "R", "acoustic_aperture")
THEORETICAL = ("WLS-T", "CRLB")
DEFAULT_METHODS = ("LS", "WLS-1", "WLS-5", "WLS-T", "CRLB")
DESK_SCALE = (8, 200)
PAPER_SCALE = (32, 1000)

_SETUP, _TRIAL, _SIGNAL = 0, 1, 2
_EMPIRICAL = re.compile(r"^(LS|WLS-(\d+))$")


@dataclass(frozen=True)
class AcousticSettings:
    sample_rate: float = 48_000.0
    signal_duration: float = 1.0
    room: tuple[float, float, float] | None = (5.0, 5.0, 3.0)
    wall_margin: float = 0.5
    n_signals: int = 1
    attenuation: str = "none"
    snr_db: float | None = None
    min_peak_quality: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    swept_parameter: str = "sigma_r"
    sweep_values: tuple = (-50.0, -40.0, -30.0, -20.0, -10.0)
    scenario: ScenarioSpec = ScenarioSpec()
    noise: NoiseSpec = NoiseSpec()
    solver: SolverOptions = SolverOptions()
    methods: tuple = DEFAULT_METHODS
    n_setups: int = DESK_SCALE[0]
    n_trials: int = DESK_SCALE[1]
    seed: int = 0
    acoustic: AcousticSettings = AcousticSettings()

    def __post_init__(self):
        if self.swept_parameter not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.swept_parameter!r}; choose from {SWEEPABLE}")
        if len(self.sweep_values) == 0:
            raise ValueError("sweep_values must not be empty")
        if self.n_setups < 1 or self.n_trials < 1:
            raise ValueError("n_setups and n_trials must be >= 1")
        for m in self.methods:
            if m not in THEORETICAL and not _EMPIRICAL.match(m):
                raise ValueError(f"unknown method {m!r}")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "methods", tuple(self.methods))

    def at_paper_scale(self) -> "ExperimentConfig":
        return replace(self, n_setups=PAPER_SCALE[0], n_trials=PAPER_SCALE[1])


@dataclass
class Cell:
    rmse_loc: float
    rmse_syn: float
    n_ok: int
    n_fail: int
    se_loc: float = np.nan
    warning: str = ""


@dataclass
class ExperimentResult:
    swept_parameter: str
    sweep_values: tuple
    methods: tuple
    cells: dict = field(default_factory=dict)  # (method, value index) -> Cell
    extras: dict = field(default_factory=dict)  # value index -> diagnostics

    def cell(self, method: str, value) -> Cell:
        return self.cells[(method, self.sweep_values.index(value))]

    def series(self, method: str, attr: str = "rmse_loc") -> np.ndarray:
        return np.array([getattr(self.cells[(method, k)], attr) for k in range(len(self.sweep_values))])


def apply_sweep(config: ExperimentConfig, value) -> tuple[ScenarioSpec, NoiseSpec]:
    """Scenario and noise spec at one sweep value (sigma axes are in 10*log10 units)."""
    spec, noise = config.scenario, config.noise
    name = config.swept_parameter
    if name in ("sigma_r", "sigma_u", "sigma_s", "sigma_r_first"):
        noise = replace(noise, **{name: db_to_sigma(float(value))})
    elif name in ("N", "M"):
        spec = replace(spec, **{name: int(value)})
    elif name == "R":
        spec = replace(spec, new_sensor_range=float(value))
    elif name == "acoustic_aperture":
        spec = replace(spec, aperture=float(value), new_sensor_range=float(value))
    return spec, noise


def _setup_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SETUP, k])


def _trial_rng(seed: int, k: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, _TRIAL, k, t])


# ---------------------------------------------------------------------------
# metrics


def rmse_loc(true_p, p_hat, ok=None) -> float:
    """Localization RMSE over setups x trials.

    ``true_p`` is (N_s, D); ``p_hat`` is (N_s, N_i, D). Entries where ``ok``
    is False are left out.
    """
    sq = np.sum((np.asarray(p_hat) - np.asarray(true_p)[:, None, :]) ** 2, axis=-1)
    return _root_mean(sq, ok)


def rmse_syn(true_tau, tau_hat, ok=None) -> float:
    """Synchronization RMSE; ``true_tau`` is (N_s,), ``tau_hat`` is (N_s, N_i)."""
    sq = (np.asarray(tau_hat) - np.asarray(true_tau)[:, None]) ** 2
    return _root_mean(sq, ok)


def _root_mean(sq: np.ndarray, ok=None) -> float:
    sq = np.asarray(sq, dtype=float)
    if ok is not None:
        sq = sq[np.asarray(ok, dtype=bool)]
    return float(np.sqrt(np.mean(sq))) if sq.size else np.nan


def rmse_theoretical(covs, c: float) -> tuple[float, float]:
    """Theoretical RMSEs from per-setup covariances of gamma: mean of traces, then root."""
    covs = np.asarray(covs, dtype=float)
    D = covs.shape[-1] - 1
    diag = np.diagonal(covs, axis1=-2, axis2=-1)
    loc = math.sqrt(np.mean(np.sum(diag[:, :D], axis=1)))
    syn = math.sqrt(np.mean(diag[:, D])) / c
    return loc, syn


# ---------------------------------------------------------------------------
# per-setup work


def _wls_depth(methods) -> int:
    depth = 0
    for m in methods:
        hit = _EMPIRICAL.match(m)
        if hit and hit.group(2):
            depth = max(depth, int(hit.group(2)))
    return depth


def _method_index(m: str) -> int:
    hit = _EMPIRICAL.match(m)
    return int(hit.group(2)) if hit.group(2) else 0


def solve_path(meas: MeasurementSet, q, solver: SolverOptions, depth: int, c: float) -> list:
    """Estimates for LS, WLS-1 .. WLS-depth; ``None`` marks a failed step.

    A WLS step whose Psi cannot be factorized keeps the previous estimate
    (flagged degraded), mirroring :func:`estimator.calibrate`.
    """
    out: list = []
    try:
        for est in iterate_estimates(meas, q, replace(solver, wls_iterations=depth), c):
            out.append(est)
    except SingularPsiError:
        last = replace(out[-1], status="degraded")
        out.extend([last] * (depth + 1 - len(out)))
    except (np.linalg.LinAlgError, ValueError):
        out.extend([None] * (depth + 1 - len(out)))
    return out


def _theoretical(method: str, scenario: Scenario, q, noise: NoiseSpec, solver: SolverOptions):
    g = scenario.D + 1
    if noise.is_zero:
        return np.zeros((g, g))
    try:
        if method == "CRLB":
            return crlb(scenario, q).gamma_cov
        return wls_theoretical_covariance(scenario, q, solver.reference_emitter)
    except (np.linalg.LinAlgError, ValueError):
        return None


@dataclass
class _SetupOutcome:
    p: np.ndarray
    tau: float
    sq_loc: dict
    sq_syn: dict
    ok: dict
    covs: dict
    extras: dict = field(default_factory=dict)


def _empirical_outcome(scenario, methods, trials, depth, c):
    """Collect squared errors from an iterable of solve paths, one per trial."""
    emp = [m for m in methods if m not in THEORETICAL]
    n = len(trials)
    sq_loc = {m: np.zeros(n) for m in emp}
    sq_syn = {m: np.zeros(n) for m in emp}
    ok = {m: np.zeros(n, bool) for m in emp}
    for t, path in enumerate(trials):
        for m in emp:
            est = path[_method_index(m)]
            if est is None:
                continue
            sq_loc[m][t] = np.sum((est.p_hat - scenario.new_sensor) ** 2)
            sq_syn[m][t] = (est.tau_p_hat - scenario.tau_p) ** 2
            ok[m][t] = True
    return sq_loc, sq_syn, ok


def _failed_outcome(config: ExperimentConfig, D: int) -> _SetupOutcome:
    """A setup that could not be placed: every trial of every method counts as failed."""
    emp = [m for m in config.methods if m not in THEORETICAL]
    zeros = {m: np.zeros(config.n_trials) for m in emp}
    ok = {m: np.zeros(config.n_trials, bool) for m in emp}
    covs = {m: None for m in config.methods if m in THEORETICAL}
    return _SetupOutcome(np.full(D, np.nan), np.nan, zeros, dict(zeros), ok, covs)


def _run_setup(config: ExperimentConfig, spec: ScenarioSpec, noise: NoiseSpec, k: int) -> _SetupOutcome:
    try:
        scenario = generate_scenario(spec, _setup_rng(config.seed, k))
    except PlacementError:
        return _failed_outcome(config, spec.D)
    q = build_covariances(noise, spec.M, spec.N, spec.D)
    depth = _wls_depth(config.methods)
    paths = [
        solve_path(corrupt(scenario, noise, _trial_rng(config.seed, k, t)), q, config.solver, depth, spec.c)
        for t in range(config.n_trials)
    ]
    sq_loc, sq_syn, ok = _empirical_outcome(scenario, config.methods, paths, depth, spec.c)
    covs = {m: _theoretical(m, scenario, q, noise, config.solver) for m in config.methods if m in THEORETICAL}
    return _SetupOutcome(scenario.new_sensor, scenario.tau_p, sq_loc, sq_syn, ok, covs)


def _aggregate(config: ExperimentConfig, outcomes: list[_SetupOutcome], c: float) -> dict:
    n_total = config.n_setups * config.n_trials
    cells = {}
    for m in config.methods:
        if m in THEORETICAL:
            good = [o.covs[m] for o in outcomes if o.covs[m] is not None]
            n_ok = len(good) * config.n_trials
            loc, syn = rmse_theoretical(np.array(good), c) if good else (np.nan, np.nan)
            cells[m] = Cell(loc, syn, n_ok, n_total - n_ok)
            continue
        sq_loc = np.concatenate([o.sq_loc[m] for o in outcomes])
        sq_syn = np.concatenate([o.sq_syn[m] for o in outcomes])
        ok = np.concatenate([o.ok[m] for o in outcomes])
        n_ok = int(ok.sum())
        loc = _root_mean(sq_loc, ok)
        se = np.nan
        if n_ok > 1 and loc > 0:
            se = float(np.std(sq_loc[ok], ddof=1) / math.sqrt(n_ok) / (2 * loc))
        cells[m] = Cell(loc, _root_mean(sq_syn, ok), n_ok, n_total - n_ok, se)
    if "CRLB" in cells:
        emp = [m for m in cells if m.startswith("WLS-") and m != "WLS-T"]
        bound = cells["CRLB"].rmse_loc
        for m in emp:
            ref = cells[m]
            if np.isfinite(bound) and np.isfinite(ref.rmse_loc) and bound > ref.rmse_loc + 2 * np.nan_to_num(ref.se_loc):
                cells["CRLB"].warning = f"exceeds_{m}"
                break
    return cells


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Sweep one parameter and aggregate RMSEs of every requested method."""
    result = ExperimentResult(config.swept_parameter, config.sweep_values, config.methods)
    specs = [apply_sweep(config, v) for v in config.sweep_values]
    units = [(vi, k) for vi in range(len(specs)) for k in range(config.n_setups)]
    outcomes = _map(lambda u: _run_setup(config, *specs[u[0]], u[1]), units, threads)
    for vi, (spec, _) in enumerate(specs):
        chunk = outcomes[vi * config.n_setups : (vi + 1) * config.n_setups]
        for m, cell in _aggregate(config, chunk, spec.c).items():
            result.cells[(m, vi)] = cell
    return result


# ---------------------------------------------------------------------------
# acoustic experiment


def generate_room_scenario(
    spec: ScenarioSpec,
    rng: np.random.Generator,
    room: tuple[float, float, float] | None,
    wall_margin: float,
) -> Scenario:
    """Scenario centred in a box room, every element at least ``wall_margin`` from the walls."""
    if room is None:
        return generate_scenario(spec, rng)
    half = np.asarray(room[: spec.D], dtype=float) / 2 - wall_margin
    if np.any(half <= 0):
        raise PlacementError(f"room {room} leaves no space with a {wall_margin} m wall margin")
    for _ in range(1000):
        sc = generate_scenario(spec, rng)
        if np.all(np.abs(sc.all_positions()) <= half):
            return sc
    raise PlacementError(f"could not fit aperture {spec.aperture} m inside room {room}")


def acoustic_tdoas(
    scenario: Scenario,
    settings: AcousticSettings,
    signal_rng: np.random.Generator,
    max_offset: float,
    min_separation: float = 0.0,
) -> acoustics.TdoaMatrix:
    """Synthesize recordings for one white-noise realization and estimate all TDOAs."""
    report = validate_geometry(scenario, min_separation=min_separation or None)
    if not report.ok:
        raise ValueError("invalid geometry: " + "; ".join(report.problems))
    sig = acoustics.white_noise(settings.signal_duration, settings.sample_rate, signal_rng)
    rec = acoustics.synthesize_anechoic(
        scenario,
        sig,
        settings.sample_rate,
        signal_rng,
        max_offset=max_offset,
        attenuation=settings.attenuation,
        snr_db=settings.snr_db,
    )
    opts = acoustics.TdoaOptions(max_offset=max_offset, min_peak_quality=settings.min_peak_quality)
    return acoustics.estimate_tdoas(rec, scenario.sensors, scenario.emitters, scenario.c, opts)


def _run_acoustic_setup(config: ExperimentConfig, spec: ScenarioSpec, noise: NoiseSpec, k: int) -> _SetupOutcome:
    st = config.acoustic
    try:
        scenario = generate_room_scenario(spec, _setup_rng(config.seed, k), st.room, st.wall_margin)
    except PlacementError:
        out = _failed_outcome(config, spec.D)
        out.extras = {"tdoa_errors": np.zeros((0,)), "flagged": np.zeros((0,), bool)}
        return out
    max_offset = max(abs(spec.offset_interval[0]), abs(spec.offset_interval[1]))
    tdoas = [
        acoustic_tdoas(scenario, st, np.random.default_rng([config.seed, _SIGNAL, k, n]), max_offset)
        for n in range(st.n_signals)
    ]
    errors = np.stack([t.values - true_tdoas(scenario) for t in tdoas])
    sigma_r = spec.c / st.sample_rate
    q = build_covariances(replace(noise, sigma_r=sigma_r, sigma_r_first=None), spec.M, spec.N, spec.D)
    depth = _wls_depth(config.methods)
    paths = []
    for t in range(config.n_trials):
        rng = _trial_rng(config.seed, k, t)
        z_u = rng.standard_normal(scenario.emitters.shape)
        z_s = rng.standard_normal(scenario.sensors.shape)
        tdoa = tdoas[t % st.n_signals]
        meas = MeasurementSet(
            spec.c * tdoa.values,
            scenario.emitters + noise.sigma_u * z_u,
            scenario.sensors + noise.sigma_s * z_s,
        )
        paths.append(solve_path(meas, q, config.solver, depth, spec.c))
    sq_loc, sq_syn, ok = _empirical_outcome(scenario, config.methods, paths, depth, spec.c)
    covs = {m: _theoretical(m, scenario, q, noise, config.solver) for m in config.methods if m in THEORETICAL}
    flagged = np.stack([t.flagged for t in tdoas])
    return _SetupOutcome(
        scenario.new_sensor, scenario.tau_p, sq_loc, sq_syn, ok, covs, {"tdoa_errors": errors, "flagged": flagged}
    )


def run_acoustic_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Experiment with TDOAs measured by GCC-PHAT on synthesized anechoic recordings.

    Each setup is synthesized ``acoustic.n_signals`` times; the ``n_trials``
    bootstraps redraw the sensor/emitter position noise and cycle through
    those TDOA sets. Psi assumes a one-sample TDOA error, ``sigma_r = c/f_s``.
    """
    result = ExperimentResult(config.swept_parameter, config.sweep_values, config.methods)
    specs = [apply_sweep(config, v) for v in config.sweep_values]
    units = [(vi, k) for vi in range(len(specs)) for k in range(config.n_setups)]
    outcomes = _map(lambda u: _run_acoustic_setup(config, *specs[u[0]], u[1]), units, threads)
    for vi, (spec, _) in enumerate(specs):
        chunk = outcomes[vi * config.n_setups : (vi + 1) * config.n_setups]
        for m, cell in _aggregate(config, chunk, spec.c).items():
            result.cells[(m, vi)] = cell
        err = np.concatenate([o.extras["tdoa_errors"].ravel() for o in chunk])
        result.extras[vi] = {
            "tdoa_errors": err,
            "tdoa_flagged": int(sum(o.extras["flagged"].sum() for o in chunk)),
            "sample_rate": config.acoustic.sample_rate,
        }
    return result


# ---------------------------------------------------------------------------
# export

CSV_COLUMNS = ("sweep_param", "sweep_value", "method", "rmse_loc_m", "rmse_syn_s", "n_ok", "n_fail", "warning")


def _fmt(x) -> str:
    return f"{float(x):.17e}"


def export_csv(result: ExperimentResult, path) -> None:
    """One row per (sweep value, method), values in full-precision scientific notation.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(result, path)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(result, fh)


def _write_rows(result: ExperimentResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for vi, value in enumerate(result.sweep_values):
        for m in result.methods:
            c = result.cells[(m, vi)]
            w.writerow(
                [result.swept_parameter, _fmt(value), m, _fmt(c.rmse_loc), _fmt(c.rmse_syn), c.n_ok, c.n_fail, c.warning]
            )


# ---------------------------------------------------------------------------
# named experiment set-ups (sweep axes of the published experiments)

_DB_SWEEP = (-50.0, -40.0, -30.0, -20.0, -10.0)

PRESETS = {
    "exp1": ExperimentConfig(swept_parameter="sigma_r", sweep_values=_DB_SWEEP),
    "exp2": ExperimentConfig(swept_parameter="sigma_u", sweep_values=_DB_SWEEP),
    "exp3": ExperimentConfig(swept_parameter="sigma_s", sweep_values=_DB_SWEEP),
    "exp4": ExperimentConfig(swept_parameter="sigma_r_first", sweep_values=_DB_SWEEP),
    "exp5": ExperimentConfig(swept_parameter="N", sweep_values=(5, 6, 8, 10, 12, 15, 20)),
    "exp6": ExperimentConfig(swept_parameter="M", sweep_values=(1, 2, 5, 10, 15, 20)),
    "exp7": ExperimentConfig(swept_parameter="R", sweep_values=(0.25, 0.5, 1.0, 2.0, 5.0, 10.0)),
    "exp8": ExperimentConfig(
        swept_parameter="acoustic_aperture",
        sweep_values=(0.2, 0.6, 1.0, 1.4, 1.8, 2.0),
        methods=("WLS-1",),
        n_trials=50,
    ),
}
