"""Joint localization and clock-offset calibration of a new sensor in an acoustic sensor network."""

from .analysis import CrlbReport, crlb, estimator_covariance, fisher_information, wls_theoretical_covariance
from .estimator import (
    CalibrationEstimate,
    RankDeficientError,
    SingularPsiError,
    SolverOptions,
    calibrate,
    iterate_estimates,
)
from .geometry import PlacementError, Scenario, ScenarioSpec, generate_scenario, validate_geometry
from .harness import ExperimentConfig, ExperimentResult, export_csv, run_acoustic_experiment, run_experiment
from .measurement import CovarianceSet, MeasurementSet, NoiseSpec, build_covariances, corrupt

__version__ = "0.1.0"

__all__ = [
    "CalibrationEstimate",
    "CovarianceSet",
    "CrlbReport",
    "ExperimentConfig",
    "ExperimentResult",
    "MeasurementSet",
    "NoiseSpec",
    "PlacementError",
    "RankDeficientError",
    "Scenario",
    "ScenarioSpec",
    "SingularPsiError",
    "SolverOptions",
    "build_covariances",
    "calibrate",
    "corrupt",
    "crlb",
    "estimator_covariance",
    "export_csv",
    "fisher_information",
    "generate_scenario",
    "iterate_estimates",
    "run_acoustic_experiment",
    "run_experiment",
    "validate_geometry",
    "wls_theoretical_covariance",
]
