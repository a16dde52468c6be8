"""Simulator and reconfiguration planner for dynamic distributed fusion systems."""
from .controller import Controller, ControllerPolicy, ErrorEvent, SystemStatus, TransitionReport, classify, transition
from .engine import Runtime, SensorReading, deploy
from .graph import FusionNodeSpec, FusionProcess, Link, make_process, sinks, sources, validate_process
from .placement import (
    Configuration,
    CostWeights,
    PlacementProblem,
    cost_communication,
    cost_distribution,
    find_first_admissible,
    find_optimal,
    is_admissible,
    total_cost,
)
from .scenario import Scenario, ScenarioError, parse_scenario
from .simulation import RunResult, Simulation, run
from .topology import Channel, ExecutionFramework, PathTable, Topology, TopologyEvent, apply_topology_event, compute_path_table

__all__ = [
    "Channel",
    "Configuration",
    "Controller",
    "ControllerPolicy",
    "CostWeights",
    "ErrorEvent",
    "ExecutionFramework",
    "FusionNodeSpec",
    "FusionProcess",
    "Link",
    "PathTable",
    "PlacementProblem",
    "RunResult",
    "Runtime",
    "Scenario",
    "ScenarioError",
    "SensorReading",
    "Simulation",
    "SystemStatus",
    "Topology",
    "TopologyEvent",
    "TransitionReport",
    "apply_topology_event",
    "classify",
    "compute_path_table",
    "cost_communication",
    "cost_distribution",
    "deploy",
    "find_first_admissible",
    "find_optimal",
    "is_admissible",
    "make_process",
    "parse_scenario",
    "run",
    "sinks",
    "sources",
    "total_cost",
    "transition",
    "validate_process",
]

__version__ = "0.1.0"
