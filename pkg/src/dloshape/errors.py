"""Exception hierarchy shared by the rod, controller and simulation layers."""


class DLOError(Exception):
    """Base class for all package errors."""


class ParameterError(DLOError, ValueError):
    """Invalid rod or material parameters (e.g. non-SPD stiffness)."""


class StateError(DLOError, ValueError):
    """A boundary state violates its invariants."""


class ArcLengthError(DLOError, ValueError):
    """Arclength query outside [0, L]."""


class DivergenceError(DLOError, ArithmeticError):
    def __init__(self, s: float, message: str = ""):
        self.s = s
        super().__init__(message or f"IVP diverged at s={s:.6g} m")


class JacobianError(DLOError):
    def __init__(self, column: str, s: float):
        self.column = column
        self.s = s
        super().__init__(f"integration diverged for perturbed column {column} at s={s:.6g} m")


class EstimationError(DLOError):
    """Missing prerequisites for initial-value estimation."""


class ControllerFault(DLOError):
    """Repeated rejection of candidate steps outside the stable neighborhood."""


class PlantFault(DLOError):
    """The simulated rod failed to settle under the commanded gripper poses."""


class GenerationError(DLOError):
    """No admissible target configuration found within the rejection budget."""


class ScenarioError(DLOError, ValueError):
    """Malformed scenario file."""
