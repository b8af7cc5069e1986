"""Simulated mobile core driving the CGHF through the four context-utilization scenarios."""

from .metrics import check_provenance, metrics_from_log, metrics_from_records, read_log
from .nf import (
    NF_KINDS,
    AccessFunction,
    Action,
    AnchorManager,
    InfeasibleAction,
    NFSubscriber,
    PolicyFunction,
    ServicePlacer,
    make_nf,
)
from .scenario import SCENARIO_DIR, SHIPPED_SCENARIOS, InvalidScenario, ScenarioSpec, ScriptEvent
from .sim import Simulation, load_scenario, run
from .topology import InvalidTopology, Topology, qoe

__all__ = [
    "AccessFunction",
    "Action",
    "AnchorManager",
    "InfeasibleAction",
    "InvalidScenario",
    "InvalidTopology",
    "NFSubscriber",
    "NF_KINDS",
    "PolicyFunction",
    "SCENARIO_DIR",
    "SHIPPED_SCENARIOS",
    "ScenarioSpec",
    "ScriptEvent",
    "ServicePlacer",
    "Simulation",
    "Topology",
    "check_provenance",
    "load_scenario",
    "make_nf",
    "metrics_from_log",
    "metrics_from_records",
    "qoe",
    "read_log",
    "run",
]
