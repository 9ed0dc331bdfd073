"""Safety-critical centralized NMPC for two legged robots carrying a shared payload.

Three single rigid bodies (two robots and the payload) are coupled by
holonomic attachment constraints. The controller plans GRFs and interaction
wrenches over a short horizon with discrete-time higher-order barrier rows
for obstacle avoidance; a separate plant integrates the constrained dynamics
with the true parameters.
"""

from .coupling import AttachmentGeometry, CoupledSystem, InteractionWrench
from .errors import (ConstraintBlowup, DegenerateDistance, GimbalProximity, PayloadNmpcError, QpSubproblemFailure,
                     ReferenceLengthMismatch, ScenarioError, SingularCoupling)
from .hocbf import HocbfParams, Obstacle, invariance_monitor
from .nmpc import NmpcController, OcpWeights, SolveResult, build_ocp, solve
from .plant import PlantConfig, RunLog, run_closed_loop
from .scenario import ScenarioSpec, load_scenario
from .srb import SrbParams, SrbState

__version__ = "0.1.0"

__all__ = [
    "AttachmentGeometry", "CoupledSystem", "InteractionWrench", "ConstraintBlowup", "DegenerateDistance",
    "GimbalProximity", "PayloadNmpcError", "QpSubproblemFailure", "ReferenceLengthMismatch", "ScenarioError",
    "SingularCoupling", "HocbfParams", "Obstacle", "invariance_monitor", "NmpcController", "OcpWeights",
    "SolveResult", "build_ocp", "solve", "PlantConfig", "RunLog", "run_closed_loop", "ScenarioSpec",
    "load_scenario", "SrbParams", "SrbState",
]
