from .controller import NmpcController, step_controller
from .kkt import KktReport, check_kkt
from .ocp import OcpProblem, OcpWeights, SingleBodyOcp, build_ocp, n_decision_vars, project_pyramid
from .sqp import KktResidual, SolveResult, solve

__all__ = [
    "NmpcController", "step_controller", "KktReport", "check_kkt", "OcpProblem", "OcpWeights", "SingleBodyOcp",
    "build_ocp", "n_decision_vars", "project_pyramid", "KktResidual", "SolveResult", "solve",
]
