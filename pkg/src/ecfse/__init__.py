"""Hybrid PMU/RTU state estimation on equivalent split circuits."""

__version__ = "0.1.0"

from .estimators import LecfStateEstimator, NecfStateEstimator, WlsStateEstimator, make_estimator
from .experiment import ExperimentConfig, ExperimentReport, run_experiment, run_pmu_sweep
from .grid import NetworkCase, load_case
from .lecf import estimate_lecf
from .measurements import (MeasurementSet, NoiseSpec, PlacementPlan, load_placement, make_placement,
                           synthesize_measurements)
from .metrics import MeasurementFunctions, measurement_variance_ratio, state_error_index
from .models import ModelOptions, build_estimation_model
from .necf import NecfOptions, estimate_necf
from .powerflow import TrueState, solve_power_flow
from .result import EstimatedState, EstimationError, UnobservableError
from .wls import estimate_wls

__all__ = [
    "EstimatedState", "EstimationError", "ExperimentConfig", "ExperimentReport", "LecfStateEstimator",
    "MeasurementFunctions", "MeasurementSet", "ModelOptions", "NecfOptions", "NecfStateEstimator",
    "NetworkCase", "NoiseSpec", "PlacementPlan", "TrueState", "UnobservableError", "WlsStateEstimator",
    "build_estimation_model", "estimate_lecf", "estimate_necf", "estimate_wls", "load_case",
    "load_placement", "make_estimator", "make_placement", "measurement_variance_ratio", "run_experiment",
    "run_pmu_sweep", "solve_power_flow", "state_error_index", "synthesize_measurements",
]
