"""Shape servoing through the rod's initial values.

Each step estimates the current initial values, linearizes the control-point
map around them, and moves the estimate along the damped pseudoinverse of that
linearization. The integrated shape then supplies the gripper pose targets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ControllerFault, EstimationError
from .jacobian import (
    BoundaryConditionMode,
    ControlPointLayout,
    DeformationJacobian,
    PerturbationDeltas,
    apply_increment,
    compute_jacobian,
    damped_pinv,
    stability_margin,
)
from .rod import BoundaryState, RodParameters, RodShape, integrate_ivp
from .so3 import Pose, log_so3


class FeedbackMode(enum.Enum):
    VISION = "vision"
    FORCE_SENSOR = "wrench"


@dataclass(frozen=True)
class Objective:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("objective points must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def check(self, layout: ControlPointLayout) -> None:
        if self.n_points != layout.n_points:
            raise ValueError(f"objective has {self.n_points} points, layout has {layout.n_points}")


@dataclass(frozen=True)
class ErrorVector:
    stacked: np.ndarray
    norms: np.ndarray

    @classmethod
    def from_points(cls, objective: Objective, measured) -> "ErrorVector":
        measured = np.asarray(measured, dtype=float).reshape(-1, 3)
        if measured.shape != objective.points.shape:
            raise ValueError("one measured point per objective point is required")
        diff = objective.points - measured
        return cls(diff.reshape(-1), np.linalg.norm(diff, axis=1))

    @property
    def mean(self) -> float:
        return float(np.mean(self.norms))

    @property
    def max(self) -> float:
        return float(np.max(self.norms))

    def is_zero(self) -> bool:
        return not np.any(self.stacked)


@dataclass(frozen=True)
class ControllerConfig:
    gain: float = 0.1
    damping: Optional[float] = None  # None: damping_ratio * largest singular value at the first step
    damping_ratio: float = 1e-3
    deltas: PerturbationDeltas = field(default_factory=PerturbationDeltas)
    convergence_tol: float = 1e-3  # m
    sigma_min_threshold: float = 1e-8
    ee_gain_translation: float = 5.0  # 1/s
    ee_gain_rotation: float = 5.0  # 1/s
    feedback: FeedbackMode = FeedbackMode.VISION
    max_rejections: int = 5

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0:
            raise ValueError("gain must lie in (0, 1]")
        if not (self.ee_gain_translation > 0 and self.ee_gain_rotation > 0):
            raise ValueError("end-effector gains must be positive")
        if self.damping is not None and self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.convergence_tol <= 0 or self.max_rejections < 1:
            raise ValueError("convergence_tol and max_rejections must be positive")


@dataclass
class ControllerState:
    gamma0_hat: BoundaryState
    prev_jacobian: Optional[DeformationJacobian] = None
    prev_pinv: Optional[np.ndarray] = None
    iteration: int = 0
    damping: Optional[float] = None
    prev_prediction: Optional[np.ndarray] = None
    prev_measured: Optional[np.ndarray] = None


@dataclass(frozen=True)
class EndEffectorTargets:
    base: Optional[Pose]
    tip: Pose


@dataclass(frozen=True)
class StepDiagnostics:
    iteration: int
    errors: np.ndarray
    mean_error: float
    max_error: float
    error_norm: float
    singular_values: np.ndarray
    stability_margin: float
    cosine_similarity: Optional[float]
    gain: float
    rejections: int


@dataclass(frozen=True)
class StepResult:
    gamma0: BoundaryState
    predicted_shape: RodShape
    ee_targets: EndEffectorTargets
    diagnostics: StepDiagnostics
    increment: np.ndarray
    prediction: np.ndarray


def cosine_similarity(a, b, eps: float = 1e-9) -> Optional[float]:
    """Cosine of the angle between two stacked vectors; None when either is below ``eps``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < eps or nb < eps:
        return None
    return float(np.dot(a, b) / (na * nb))


def estimate_initial_values(state: ControllerState, eps: ErrorVector, cfg: ControllerConfig,
                            mode: BoundaryConditionMode = BoundaryConditionMode.BI_ARM,
                            wrench_reading=None, base_pose: Optional[Pose] = None) -> BoundaryState:
    """Current initial values, from the previous pseudoinverse or from the base sensor."""
    if cfg.feedback is FeedbackMode.FORCE_SENSOR:
        if wrench_reading is None:
            raise EstimationError("force-sensor feedback needs a base wrench reading")
        n, m = wrench_reading
        if mode is BoundaryConditionMode.CLAMPED_BASE or base_pose is None:
            if mode is BoundaryConditionMode.BI_ARM and base_pose is None:
                raise EstimationError("force-sensor feedback in bi-arm mode needs the base gripper pose")
            return state.gamma0_hat.with_wrench(n, m)
        return BoundaryState(base_pose.p, base_pose.R, n, m)
    if state.prev_pinv is None:
        if state.iteration == 0:
            return state.gamma0_hat
        raise EstimationError("vision feedback needs the previous step's pseudoinverse")
    if eps.is_zero():
        return state.gamma0_hat
    return apply_increment(state.gamma0_hat, cfg.gain * (state.prev_pinv @ eps.stacked), mode)


def _candidate_margin(gamma0: BoundaryState, params: RodParameters, layout: ControlPointLayout,
                      deltas: PerturbationDeltas) -> float:
    jac = compute_jacobian(gamma0, params, layout, BoundaryConditionMode.CLAMPED_BASE, deltas)
    return float(jac.singular_values[-1])


def control_step(state: ControllerState, measured_points, objective: Objective, params: RodParameters,
                 layout: ControlPointLayout, mode: BoundaryConditionMode, cfg: ControllerConfig,
                 wrench_reading=None, base_pose: Optional[Pose] = None) -> StepResult:
    """One pass of the servo loop; mutates ``state`` only once the step is accepted."""
    objective.check(layout)
    measured = np.asarray(measured_points, dtype=float).reshape(-1, 3)
    eps = ErrorVector.from_points(objective, measured)

    cos = None
    if state.prev_prediction is not None and state.prev_measured is not None:
        cos = cosine_similarity(state.prev_prediction, (measured - state.prev_measured).reshape(-1))

    g_hat = estimate_initial_values(state, eps, cfg, mode, wrench_reading, base_pose)
    jac = compute_jacobian(g_hat, params, layout, mode, cfg.deltas)
    damping = state.damping
    if damping is None:
        damping = cfg.damping if cfg.damping is not None else cfg.damping_ratio * float(jac.singular_values[0])
    jac = jac.with_damping(damping)
    pinv = damped_pinv(jac)
    direction = pinv @ eps.stacked

    gain = cfg.gain
    rejections = 0
    while True:
        delta = gain * direction
        candidate = apply_increment(g_hat, delta, mode) if np.any(delta) else g_hat
        # a zero increment keeps the current estimate, which is accepted as a fixed point
        margin = stability_margin(jac) if candidate is g_hat else _candidate_margin(candidate, params, layout, cfg.deltas)
        if candidate is g_hat or margin > cfg.sigma_min_threshold:
            break
        rejections += 1
        if rejections >= cfg.max_rejections:
            raise ControllerFault(
                f"step {state.iteration}: stability margin {margin:.3g} <= {cfg.sigma_min_threshold:.3g} "
                f"after {rejections} gain halvings"
            )
        gain *= 0.5

    shape = integrate_ivp(candidate, params)
    targets = EndEffectorTargets(
        shape.base.pose if mode is BoundaryConditionMode.BI_ARM else None,
        shape.tip.pose,
    )
    prediction = jac.matrix @ delta
    diag = StepDiagnostics(
        iteration=state.iteration,
        errors=eps.norms,
        mean_error=eps.mean,
        max_error=eps.max,
        error_norm=float(np.linalg.norm(eps.stacked)),
        singular_values=jac.singular_values,
        stability_margin=margin,
        cosine_similarity=cos,
        gain=gain,
        rejections=rejections,
    )

    state.gamma0_hat = g_hat
    state.prev_jacobian = jac
    state.prev_pinv = pinv
    state.damping = damping
    state.prev_prediction = prediction
    state.prev_measured = measured
    state.iteration += 1
    return StepResult(candidate, shape, targets, diag, delta, prediction)


def ee_velocity_command(current_pose: Pose, target_pose: Pose, cfg: ControllerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Proportional twist driving a gripper toward its target pose.

    The angular part is expressed in the gripper frame, so the rotation
    ``R exp(v_a dt)`` shrinks the orientation error along its own axis.
    """
    e_t = current_pose.p - target_pose.p
    e_a = log_so3(target_pose.R.T @ current_pose.R)
    return -cfg.ee_gain_translation * e_t, -cfg.ee_gain_rotation * e_a
