"""Deterministic discrete-event simulator of digital preservation systems."""

from .content import ConfigurationError, ContentState, Digest, ReplicaState, World
from .kernel import Event, Kernel, SchedulingError, Streams
from .metrics import MetricsSnapshot, aggregate
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .simulation import RunResult, Simulation, run

__all__ = [
    "ConfigurationError", "ContentState", "Digest", "Event", "Kernel", "MetricsSnapshot", "ReplicaState",
    "RunResult", "Scenario", "ScenarioError", "SchedulingError", "Simulation", "Streams", "World",
    "aggregate", "load_scenario", "parse_scenario", "run",
]

__version__ = "0.1.0"
