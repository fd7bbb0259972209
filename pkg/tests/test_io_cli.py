import csv
import json

import numpy as np
import pytest

from wasncal import io
from wasncal.cli import _experiment_config, build_parser, main
from wasncal.estimator import SolverOptions, calibrate
from wasncal.geometry import ScenarioSpec, generate_scenario
from wasncal.harness import ExperimentConfig
from wasncal.measurement import NoiseSpec, build_covariances, corrupt, true_tdoas


@pytest.fixture
def scenario():
    return generate_scenario(ScenarioSpec(seed=11))


def test_scenario_round_trip(tmp_path, scenario):
    io.save_scenario(scenario, tmp_path / "s.json")
    assert io.load_scenario(tmp_path / "s.json") == scenario


def test_measurement_round_trip(tmp_path, scenario):
    meas = corrupt(scenario, NoiseSpec(), np.random.default_rng(0))
    io.save_measurements(meas, tmp_path / "m.json", NoiseSpec(2e-3, 1e-3, 1e-3))
    back, noise = io.load_measurements(tmp_path / "m.json")
    np.testing.assert_array_equal(back.r_tilde, meas.r_tilde)
    np.testing.assert_array_equal(back.u_tilde, meas.u_tilde)
    assert noise.sigma_r == 2e-3


def test_wrong_kind_rejected(tmp_path, scenario):
    io.save_scenario(scenario, tmp_path / "s.json")
    with pytest.raises(io.FormatError):
        io.load_measurements(tmp_path / "s.json")


def test_missing_field_rejected():
    with pytest.raises(io.FormatError):
        io.scenario_from_dict({"kind": io.SCENARIO_KIND, "version": 1, "dimension": 3})


def test_tdoa_csv_round_trip(tmp_path, scenario):
    io.write_tdoa_csv(tmp_path / "t.csv", true_tdoas(scenario))
    back = io.read_tdoa_csv(tmp_path / "t.csv", scenario.M, scenario.N)
    np.testing.assert_array_equal(back, true_tdoas(scenario))


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_index", "emitter_index", "tdoa_seconds"])
        w.writerows(rows)


def test_tdoa_csv_errors(tmp_path):
    _write_rows(tmp_path / "dup.csv", [[0, 0, 0.1], [0, 0, 0.2]])
    with pytest.raises(io.FormatError, match="duplicate"):
        io.read_tdoa_csv(tmp_path / "dup.csv", 1, 2)
    _write_rows(tmp_path / "gap.csv", [[0, 0, 0.1]])
    with pytest.raises(io.FormatError, match="no TDOA"):
        io.read_tdoa_csv(tmp_path / "gap.csv", 1, 2)
    _write_rows(tmp_path / "range.csv", [[0, 5, 0.1]])
    with pytest.raises(io.FormatError, match="outside"):
        io.read_tdoa_csv(tmp_path / "range.csv", 1, 2)
    (tmp_path / "hdr.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(io.FormatError, match="header"):
        io.read_tdoa_csv(tmp_path / "hdr.csv", 1, 2)


def test_config_round_trip():
    cfg = ExperimentConfig(swept_parameter="N", sweep_values=(5.0, 10.0), n_setups=3, seed=9)
    assert io.config_from_dict(io.config_to_dict(cfg)) == cfg


def test_config_db_keys_and_unknown_keys():
    cfg = io.config_from_dict({"noise": {"sigma_r_db": -20}, "scenario": {"M": 4}})
    assert cfg.noise.sigma_r == pytest.approx(1e-2)
    assert cfg.scenario.M == 4
    with pytest.raises(io.FormatError):
        io.config_from_dict({"colour": "blue"})
    with pytest.raises(io.FormatError):
        io.config_from_dict({"solver": {"iterations": 3}})


def test_config_file_beats_preset_and_flag_beats_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"n_trials": 7, "seed": 4, "solver": {"wls_iterations": 3}}))
    parser = build_parser()
    args = parser.parse_args(["experiment", "--preset", "exp2", "--config", str(tmp_path / "c.json"), "--seed", "8"])
    cfg = _experiment_config(args, "exp1")
    assert cfg.swept_parameter == "sigma_u"  # from the preset
    assert cfg.n_trials == 7 and cfg.solver.wls_iterations == 3  # from the file
    assert cfg.seed == 8  # flag wins


def test_cli_simulate_then_calibrate(tmp_path, capsys):
    assert main(["simulate", "--seed", "2", "--sigma-r-db", "-40", "--out-dir", str(tmp_path)]) == 0
    assert main(["calibrate", "--measurements", str(tmp_path / "measurements.json"), "--out", str(tmp_path / "e.json")]) == 0
    est = json.loads((tmp_path / "e.json").read_text())
    sc = io.load_scenario(tmp_path / "scenario.json")
    assert est["kind"] == io.ESTIMATE_KIND
    assert np.linalg.norm(np.array(est["position_m"]) - sc.new_sensor) < 0.02
    assert est["offset_s"] * est["c_m_per_s"] == pytest.approx(est["offset_m"])


def test_cli_calibrate_from_tdoa_csv_matches_library(tmp_path, scenario, capsys):
    rng = np.random.default_rng(1)
    tdoa = true_tdoas(scenario) + 2e-6 * rng.standard_normal((scenario.M, scenario.N))
    io.write_tdoa_csv(tmp_path / "t.csv", tdoa)
    io.save_scenario(scenario, tmp_path / "s.json")
    argv = ["calibrate", "--tdoa-csv", str(tmp_path / "t.csv"), "--positions", str(tmp_path / "s.json")]
    assert main(argv + ["--tdoa-noise-units", "s", "--sigma-r", "2e-6", "--sigma-u", "1e-3", "--sigma-s", "1e-3"]) == 0
    out = json.loads(capsys.readouterr().out)
    from wasncal.measurement import MeasurementSet

    meas = MeasurementSet(343.0 * tdoa, scenario.emitters, scenario.sensors)
    ref = calibrate(meas, build_covariances(NoiseSpec(343.0 * 2e-6, 1e-3, 1e-3), 10, 10, 3), SolverOptions())
    np.testing.assert_allclose(out["position_m"], ref.p_hat, rtol=1e-12)


def test_cli_crlb(tmp_path, scenario, capsys):
    io.save_scenario(scenario, tmp_path / "s.json")
    assert main(["crlb", "--scenario", str(tmp_path / "s.json"), "--matrices"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["reliable"] and len(doc["fisher"]) == 64


def test_cli_experiment_writes_csv(tmp_path):
    out = tmp_path / "r.csv"
    argv = ["experiment", "--values", "-30", "--n-setups", "1", "--n-trials", "5", "--out", str(out)]
    assert main(argv) == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 1 + 5


def test_cli_error_exit_codes(tmp_path, capsys):
    assert main(["calibrate", "--measurements", str(tmp_path / "missing.json")]) != 0
    (tmp_path / "bad.json").write_text(json.dumps({"n_trials": 0}))
    assert main(["experiment", "--config", str(tmp_path / "bad.json")]) != 0
    assert main(["calibrate"]) != 0
    assert main(["simulate", "--sigma-r", "1e-3", "--sigma-r-db", "-30", "--out-dir", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err
