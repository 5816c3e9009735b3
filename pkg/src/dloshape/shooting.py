"""Shooting-method estimation of the unknown base wrench (n0, m0).

The base pose is known; the wrench is adjusted by Levenberg-Marquardt until
the integrated rod fits either measured control points or a tip pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DivergenceError, JacobianError, PlantFault
from .jacobian import BoundaryConditionMode, ControlPointLayout, PerturbationDeltas, perturbation_batch
from .rod import BoundaryState, RodParameters, integrate_arrays, interpolate_positions, interpolation_weights
from .so3 import Pose, log_so3

WRENCH = BoundaryConditionMode.CLAMPED_BASE


@dataclass(frozen=True)
class ControlPointResidual:
    layout: ControlPointLayout
    measured: np.ndarray

    def __post_init__(self):
        measured = np.asarray(self.measured, dtype=float).reshape(-1, 3)
        if len(measured) != self.layout.n_points:
            raise ValueError("one measured position per control point is required")
        object.__setattr__(self, "measured", measured)

    @property
    def size(self) -> int:
        return 3 * self.layout.n_points


@dataclass(frozen=True)
class TipPoseResidual:
    target: Pose
    rotation_weight: float = 1.0  # m/rad

    size = 6


@dataclass(frozen=True)
class ShootingProblem:
    base: Pose
    residual: Union[ControlPointResidual, TipPoseResidual]


@dataclass(frozen=True)
class ShootingResult:
    gamma0: BoundaryState
    residual_norm: float
    iterations: int
    converged: bool
    history: tuple[float, ...] = field(default=())


def _evaluate(problem: ShootingProblem, params: RodParameters, P, Rs) -> np.ndarray:
    """Residual rows for each trajectory in a batch, shape (B, size)."""
    res = problem.residual
    if isinstance(res, ControlPointResidual):
        idx, w = interpolation_weights(res.layout.arclengths, params.length, params.n_steps)
        pts = interpolate_positions(P, idx, w)
        return (pts - res.measured[None]).reshape(len(P), -1)
    out = np.empty((len(P), 6))
    out[:, :3] = P[:, -1] - res.target.p[None]
    for b in range(len(P)):
        out[b, 3:] = res.rotation_weight * log_so3(res.target.R.T @ Rs[b, -1])
    return out


def residual(problem: ShootingProblem, params: RodParameters, wrench) -> np.ndarray:
    """Residual vector of a single wrench guess; raises on divergence."""
    wrench = np.asarray(wrench, dtype=float)
    P, Rs, _, _, bad = integrate_arrays(
        problem.base.p[None], problem.base.R[None], wrench[None, :3], wrench[None, 3:], params
    )
    if bad[0] >= 0:
        raise DivergenceError(float(bad[0] * params.ds))
    return _evaluate(problem, params, P, Rs)[0]


def _residual_and_jacobian(problem, params, wrench, steps):
    g = BoundaryState(problem.base.p, problem.base.R, wrench[:3], wrench[3:])
    P0, R0, N0, M0, h = perturbation_batch(g, WRENCH, steps)
    P, Rs, _, _, bad = integrate_arrays(P0, R0, N0, M0, params)
    if bad[0] >= 0:
        raise DivergenceError(float(bad[0] * params.ds))
    for j, b in enumerate(bad[1:]):
        if b >= 0:
            raise JacobianError(WRENCH.column_labels[j], float(b * params.ds))
    r = _evaluate(problem, params, P, Rs)
    return r[0], ((r[1:] - r[0][None]) / h[:, None]).T


def _cost(problem, params, wrench) -> float:
    try:
        return float(np.linalg.norm(residual(problem, params, wrench)))
    except DivergenceError:
        return np.inf


def _as_wrench(guess) -> np.ndarray:
    if guess is None:
        return np.zeros(6)
    if isinstance(guess, tuple) and len(guess) == 2:
        return np.concatenate([np.ravel(guess[0]), np.ravel(guess[1])]).astype(float)
    return np.asarray(guess, dtype=float).ravel()


def solve_shooting(problem: ShootingProblem, params: RodParameters, init_guess=None, tol: float = 1e-6,
                   max_iters: int = 100, deltas: Optional[PerturbationDeltas] = None) -> ShootingResult:
    """Levenberg-Marquardt on the six wrench unknowns.

    The residual Jacobian is a forward finite difference over the wrench
    columns. Damping is isotropic in raw units, starting at
    ``1e-3 trace(JtJ) / 6``: this suppresses the stiff axial direction, which
    otherwise drags cold starts into compression past the buckling load.
    Lambda is divided by 10 after a successful step and multiplied by 10 after
    a rejected one.
    Returns the best iterate with ``converged=False`` when ``tol`` is not met.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = _as_wrench(init_guess)
    if x.shape != (6,) or not np.all(np.isfinite(x)):
        raise ValueError("initial wrench guess must be six finite numbers")
    steps = (deltas or PerturbationDeltas()).resolve(params)

    def to_state(w):
        return BoundaryState(problem.base.p, problem.base.R, w[:3], w[3:])

    try:
        r = residual(problem, params, x)
    except DivergenceError:
        return ShootingResult(to_state(x), np.inf, 0, False)
    cost = float(np.linalg.norm(r))
    history = [cost]
    lam = None
    it = 0
    while cost >= tol and it < max_iters:
        it += 1
        try:
            r, J = _residual_and_jacobian(problem, params, x, steps)
        except (DivergenceError, JacobianError):
            break
        A = J.T @ J
        g = J.T @ r
        if lam is None:
            lam = 1e-3 * np.trace(A) / 6.0
        lam_floor = 1e-15 * np.trace(A)
        # undamped Gauss-Newton first, kept only on a clear decrease so that
        # cold starts fall through to the damped schedule
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        cost_new = _cost(problem, params, x + step)
        if cost_new < 0.5 * cost:
            x, cost = x + step, cost_new
            history.append(cost)
            continue
        improved = False
        while lam < 1e16 * np.trace(A):
            step = np.linalg.solve(A + lam * np.eye(6), -g)
            cost_new = _cost(problem, params, x + step)
            if cost_new < cost:
                x, cost = x + step, cost_new
                lam = max(lam / 10.0, lam_floor)
                improved = True
                break
            lam *= 10.0
        history.append(cost)
        if not improved:
            break
    return ShootingResult(to_state(x), cost, it, cost < tol, tuple(history))


def solve_plant_bvp(base_pose: Pose, tip_pose: Pose, params: RodParameters,
                    warm_start: Optional[BoundaryState] = None, tol: float = 1e-8,
                    max_iters: int = 100, rotation_weight: float = 1.0) -> BoundaryState:
    """True base state of a rod clamped at both grippers."""
    result = solve_plant_bvp_result(base_pose, tip_pose, params, warm_start, tol, max_iters, rotation_weight)
    if not result.converged:
        raise PlantFault(f"rod failed to settle: residual {result.residual_norm:.3g} after {result.iterations} iterations")
    return result.gamma0


def solve_plant_bvp_result(base_pose: Pose, tip_pose: Pose, params: RodParameters,
                           warm_start: Optional[BoundaryState] = None, tol: float = 1e-8,
                           max_iters: int = 100, rotation_weight: float = 1.0) -> ShootingResult:
    """Same as :func:`solve_plant_bvp` but returns the full result and never raises."""
    guess = None if warm_start is None else warm_start.wrench
    problem = ShootingProblem(base_pose, TipPoseResidual(tip_pose, rotation_weight))
    return solve_shooting(problem, params, guess, tol=tol, max_iters=max_iters)
