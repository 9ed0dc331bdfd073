from __future__ import annotations


class PayloadNmpcError(Exception):
    pass


class GimbalProximity(PayloadNmpcError, ValueError):
    """Pitch too close to +-pi/2 for the ZYX Euler-rate map."""


class SingularCoupling(PayloadNmpcError, ArithmeticError):
    """Constraint-wrench system is (numerically) singular."""


class ConstraintBlowup(PayloadNmpcError, RuntimeError):
    """Holonomic residual left the admissible band during simulation."""


class DegenerateDistance(PayloadNmpcError, ValueError):
    """Body centre coincides with an obstacle centre."""


class ReferenceLengthMismatch(PayloadNmpcError, ValueError):
    pass


class QpSubproblemFailure(PayloadNmpcError, RuntimeError):
    pass


class ScenarioError(PayloadNmpcError, ValueError):
    """Scenario file could not be parsed or failed validation."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
