"""Adaptive PMU streaming and distribution system state estimation testbed.

Pipeline: simulated radial feeder -> emulated PMUs streaming IEEE C37.118.2
frames -> virtual objects with adaptive reporting-rate logic -> multi-rate
coordinator -> branch-current WLS state estimator, with a CLI that compares
adaptive against full-rate estimation.
"""

from .coordinator import StreamCoordinator, replay_recording
from .dsse import (
    EstimatorSettings,
    PseudoMeasurement,
    build_model,
    estimate_snapshot,
    power_to_current_pseudo,
    pseudos_from_network,
)
from .kernels import active_backend
from .network import NetworkModel, build_index, load_network, network_from_dict
from .pipeline import run_estimation
from .pmu import PmuConfig, SynchrophasorSample, emulate_stream
from .powerflow import SweepSolver, solve_power_flow
from .report import ComparisonReport, report_from_result, report_from_run_dir
from .scenario import GroundTruthSeries, Scenario, load_scenario, run_scenario
from .vo import (
    RateLevel,
    Thresholds,
    VirtualObject,
    VoMeasurement,
    compute_metrics,
    step_controller,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "EstimatorSettings",
    "GroundTruthSeries",
    "NetworkModel",
    "PmuConfig",
    "PseudoMeasurement",
    "RateLevel",
    "Scenario",
    "StreamCoordinator",
    "SweepSolver",
    "SynchrophasorSample",
    "Thresholds",
    "VirtualObject",
    "VoMeasurement",
    "active_backend",
    "build_index",
    "build_model",
    "compute_metrics",
    "emulate_stream",
    "estimate_snapshot",
    "load_network",
    "load_scenario",
    "network_from_dict",
    "power_to_current_pseudo",
    "pseudos_from_network",
    "replay_recording",
    "report_from_result",
    "report_from_run_dir",
    "run_estimation",
    "run_scenario",
    "solve_power_flow",
    "step_controller",
    "__version__",
]
