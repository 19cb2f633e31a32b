"""Adaptive sender/receiver clock synchronization as an event-driven hybrid system."""

from .certificate import Certificate, check_lmi, convergence_factors, design_p
from .error_model import a_g, exp_af, round_map
from .multi_agent import MultiState, run_multi
from .sim_engine import Horizon, HybridState, ProtocolParams, Trajectory, run

__all__ = [
    "Certificate",
    "Horizon",
    "HybridState",
    "MultiState",
    "ProtocolParams",
    "Trajectory",
    "a_g",
    "check_lmi",
    "convergence_factors",
    "design_p",
    "exp_af",
    "round_map",
    "run",
    "run_multi",
]
