"""Deterministic network simulator and adversary catalog."""
from .adversary import CATALOG, Behavior, make_behavior
from .engine import ClientSpec, SimConfig, SimResult, Simulation, simulate

__all__ = ["CATALOG", "Behavior", "ClientSpec", "SimConfig", "SimResult", "Simulation",
           "make_behavior", "simulate"]
