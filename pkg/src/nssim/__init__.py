"""Switched piecewise-LTI circuit simulation with a dual-network neural substitute solver."""

from .circuit import (
    CircuitTopology,
    assemble_matrices,
    bundled_circuit,
    delta_matrices,
    enumerate_admissible_switch_set,
    load_topology,
    load_topology_file,
    one_hot_encode,
)
from .errors import ConfigError, NssError, NumericalError, TrainingError
from .nss import NssBundle, load_bundle, nss_simulate, nss_step, save_bundle
from .solvers import EventSchedule, InputSpec, PwmSpec, SolverConfig, build_event_schedule, event_driven_simulate

__all__ = [
    "CircuitTopology",
    "ConfigError",
    "EventSchedule",
    "InputSpec",
    "NssBundle",
    "NssError",
    "NumericalError",
    "PwmSpec",
    "SolverConfig",
    "TrainingError",
    "assemble_matrices",
    "build_event_schedule",
    "bundled_circuit",
    "delta_matrices",
    "enumerate_admissible_switch_set",
    "event_driven_simulate",
    "load_bundle",
    "load_topology",
    "load_topology_file",
    "nss_simulate",
    "nss_step",
    "one_hot_encode",
    "save_bundle",
]

__version__ = "0.1.0"
