"""Quasi-static stand-in for the physical setup.

A ground-truth rod is clamped in two virtual grippers. Each step integrates the
commanded gripper twists over ``dt`` and re-solves the clamped-clamped
equilibrium, warm-started from the previous one. Markers and the base
force/torque sensor are read with optional Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .jacobian import BoundaryConditionMode, ControlPointLayout
from .rod import BoundaryState, RodParameters, RodShape, integrate_ivp, positions_at
from .shooting import solve_plant_bvp
from .so3 import Pose, exp_so3


@dataclass(frozen=True)
class Twist:
    """Linear velocity (m/s, world frame) and angular velocity (rad/s, gripper frame)."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        for k in ("linear", "angular"):
            a = np.array(getattr(self, k), dtype=float).reshape(3)
            if not np.all(np.isfinite(a)):
                raise ValueError("twist components must be finite")
            a.flags.writeable = False
            object.__setattr__(self, k, a)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def is_zero(self) -> bool:
        return not (np.any(self.linear) or np.any(self.angular))

    def saturated(self, max_linear: float, max_angular: float) -> "Twist":
        def clip(v, vmax):
            nv = np.linalg.norm(v)
            return v * (vmax / nv) if nv > vmax else v

        return Twist(clip(self.linear, max_linear), clip(self.angular, max_angular))


@dataclass(frozen=True)
class PlantConfig:
    true_params: RodParameters
    mode: BoundaryConditionMode = BoundaryConditionMode.BI_ARM
    marker_noise_sigma: float = 0.0
    wrench_noise_sigma: tuple[float, float] = (0.0, 0.0)
    dt: float = 0.1
    max_twist: tuple[float, float] = (0.5, 2.0)
    rng_seed: int = 0
    bvp_tol: float = 1e-8

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.marker_noise_sigma < 0 or min(self.wrench_noise_sigma) < 0:
            raise ValueError("noise levels must be non-negative")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


@dataclass(frozen=True)
class PlantState:
    base: Pose
    tip: Pose
    true_gamma0: BoundaryState
    true_shape: RodShape
    clock: float = 0.0


def make_plant(gamma0: BoundaryState, cfg: PlantConfig) -> PlantState:
    """Place the grippers on the boundary poses of the rod integrated from ``gamma0``."""
    shape = integrate_ivp(gamma0, cfg.true_params)
    return PlantState(shape.base.pose, shape.tip.pose, gamma0, shape, 0.0)


def _advance(pose: Pose, twist: Twist, dt: float) -> Pose:
    return Pose(pose.p + twist.linear * dt, pose.R @ exp_so3(twist.angular * dt))


def step(plant: PlantState, twists: Sequence[Optional[Twist]], cfg: PlantConfig) -> PlantState:
    """Advance by ``cfg.dt`` under ``(base_twist, tip_twist)``; the base is frozen when clamped."""
    base_tw, tip_tw = twists
    vmax, wmax = cfg.max_twist
    if base_tw is None or cfg.mode is BoundaryConditionMode.CLAMPED_BASE:
        base_tw = Twist.zero()
    tip_tw = Twist.zero() if tip_tw is None else tip_tw
    base_tw = base_tw.saturated(vmax, wmax)
    tip_tw = tip_tw.saturated(vmax, wmax)
    clock = plant.clock + cfg.dt
    if base_tw.is_zero() and tip_tw.is_zero():
        return replace(plant, clock=clock)
    base = plant.base if base_tw.is_zero() else _advance(plant.base, base_tw, cfg.dt)
    tip = plant.tip if tip_tw.is_zero() else _advance(plant.tip, tip_tw, cfg.dt)
    gamma0 = solve_plant_bvp(base, tip, cfg.true_params, warm_start=plant.true_gamma0, tol=cfg.bvp_tol)
    return PlantState(base, tip, gamma0, integrate_ivp(gamma0, cfg.true_params), clock)


def measure_markers(plant: PlantState, layout: ControlPointLayout, cfg: PlantConfig,
                    rng: np.random.Generator) -> np.ndarray:
    pts = positions_at(plant.true_shape, layout.arclengths)
    if cfg.marker_noise_sigma > 0:
        pts = pts + rng.normal(0.0, cfg.marker_noise_sigma, pts.shape)
    return pts


def measure_base_wrench(plant: PlantState, cfg: PlantConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = np.array(plant.true_gamma0.n)
    m = np.array(plant.true_gamma0.m)
    sn, sm = cfg.wrench_noise_sigma
    if sn > 0:
        n = n + rng.normal(0.0, sn, 3)
    if sm > 0:
        m = m + rng.normal(0.0, sm, 3)
    return n, m
