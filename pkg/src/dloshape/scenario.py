"""Scenario description, TOML loading and seeded target generation.

A scenario file is a TOML document. Every physical field carries its SI unit
in the key name; see ``scenarios/`` and the README for complete examples::

    name = "rubber_biarm"
    preset = "rubber_band"
    mode = "biarm"                # or "clamped"
    seed = 0
    max_iterations = 300
    repeat_count = 1

    [objective]
    source = "sample"             # or "explicit" with points_m = [[x, y, z], ...]

    [controller]
    gain = 0.1

    [plant]
    kt_multiplier = 1.0
    kr_multiplier = 1.0
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import ControllerConfig, FeedbackMode, Objective
from .errors import DivergenceError, GenerationError, JacobianError, ScenarioError
from .jacobian import BoundaryConditionMode, ControlPointLayout, PerturbationDeltas, compute_jacobian
from .presets import ObjectPreset, get_preset
from .rod import BoundaryState, RodParameters, integrate_ivp, positions_at
from .so3 import Pose, exp_so3


@dataclass(frozen=True)
class TargetSampler:
    """Ranges for sampled target wrenches, in curvature units of the object.

    Moments are drawn as ``EI * kappa`` with ``|kappa L|`` up to the bending
    (and torsion) scale; forces up to ``force_scale * EI / L^2``.
    """

    bend_scale: float = 1.5
    torsion_scale: float = 0.3
    transverse_force_scale: float = 1.5
    axial_force_scale: float = 0.5
    max_strain: float = 0.05
    max_curvature_length: float = 6.0  # max |u| L over the rod
    sigma_min_threshold: float = 1e-8
    budget: int = 200


@dataclass(frozen=True)
class InitialPerturbation:
    """Spread of the starting configuration around the target one.

    Wrench offsets are relative to the object's ``EI / L^2`` and ``EI / L``;
    ``repeat_spread`` varies the overall magnitude across repeated runs.
    """

    wrench_scale: float = 0.3
    position_m: float = 0.02
    rotation_rad: float = 0.1
    repeat_spread: float = 0.4
    budget: int = 50


@dataclass(frozen=True)
class PlantSettings:
    kt_multiplier: float = 1.0
    kr_multiplier: float = 1.0
    # per-axis factors on Kr (bending x, bending y, torsion), on top of kr_multiplier
    kr_axis_multipliers: tuple[float, float, float] = (1.0, 1.0, 1.0)
    marker_noise_sigma_m: float = 0.0
    wrench_noise_sigma_n: float = 0.0
    wrench_noise_sigma_nm: float = 0.0
    dt_s: float = 0.1
    max_linear_speed_m_per_s: float = 0.5
    max_angular_speed_rad_per_s: float = 2.0
    bvp_tol: float = 1e-8

    def __post_init__(self):
        axes = tuple(float(x) for x in self.kr_axis_multipliers)
        if len(axes) != 3:
            raise ScenarioError("kr_axis_multipliers needs three entries")
        if min(self.kt_multiplier, self.kr_multiplier, *axes) <= 0:
            raise ScenarioError("stiffness multipliers must be positive")
        object.__setattr__(self, "kr_axis_multipliers", axes)


@dataclass(frozen=True)
class Scenario:
    name: str
    preset: ObjectPreset
    mode: BoundaryConditionMode = BoundaryConditionMode.BI_ARM
    layout: Optional[ControlPointLayout] = None
    objective_points: Optional[np.ndarray] = None  # None: sample a reachable target
    objective_seed: Optional[int] = None
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    plant: PlantSettings = field(default_factory=PlantSettings)
    sampler: TargetSampler = field(default_factory=TargetSampler)
    initial: InitialPerturbation = field(default_factory=InitialPerturbation)
    max_iterations: int = 300
    repeat_count: int = 1
    seed: int = 0
    n_steps: int = 100
    shooting_tol_m: float = 1e-6
    # a model with the wrong stiffness cannot fit the markers exactly; the
    # best fit is still used when its residual stays below this
    shooting_accept_m: float = 1e-4
    fail_threshold_m: float = 3e-3

    def __post_init__(self):
        if self.layout is None:
            object.__setattr__(self, "layout", ControlPointLayout.uniform(self.preset.length_m, self.preset.n_markers))
        self.layout.validate(self.preset.length_m)
        if self.objective_points is not None:
            Objective(self.objective_points).check(self.layout)
        if self.max_iterations < 1 or self.repeat_count < 1:
            raise ScenarioError("max_iterations and repeat_count must be positive")

    def model_params(self) -> RodParameters:
        """The controller's (nominal) rod model."""
        return self.preset.params(self.n_steps)

    def true_params(self) -> RodParameters:
        p = self.plant
        return self.model_params().scaled(p.kt_multiplier, p.kr_multiplier, p.kr_axis_multipliers)

    @property
    def target_seed(self) -> int:
        return self.seed if self.objective_seed is None else self.objective_seed


def _bending_stiffness(params: RodParameters) -> float:
    return float(np.sqrt(params.kr[0, 0] * params.kr[1, 1]))


def _strain_ok(shape, params: RodParameters, sampler: TargetSampler) -> bool:
    kt_inv = np.linalg.inv(params.kt)
    kr_inv = np.linalg.inv(params.kr)
    local_n = np.einsum("sji,sj->si", shape.R, shape.n)
    local_m = np.einsum("sji,sj->si", shape.R, shape.m)
    strain = np.abs(local_n @ kt_inv.T).max()
    curvature = np.linalg.norm(local_m @ kr_inv.T, axis=1).max()
    return strain <= sampler.max_strain and curvature * params.length <= sampler.max_curvature_length


def admissible(gamma0: BoundaryState, params: RodParameters, layout: ControlPointLayout,
               sampler: TargetSampler) -> bool:
    """Bounded strain and a wrench block that is not singular."""
    try:
        shape = integrate_ivp(gamma0, params)
        if not _strain_ok(shape, params, sampler):
            return False
        jac = compute_jacobian(gamma0, params, layout, BoundaryConditionMode.CLAMPED_BASE)
    except (DivergenceError, JacobianError):
        return False
    return float(jac.singular_values[-1]) > sampler.sigma_min_threshold


def _draw_wrench(rng: np.random.Generator, params: RodParameters, sampler: TargetSampler):
    L = params.length
    EI = _bending_stiffness(params)
    kappa = rng.uniform(-1.0, 1.0, 3) * np.array([sampler.bend_scale, sampler.bend_scale, sampler.torsion_scale]) / L
    force = rng.uniform(-1.0, 1.0, 3) * np.array(
        [sampler.transverse_force_scale, sampler.transverse_force_scale, sampler.axial_force_scale]
    ) * EI / L**2
    return force, EI * kappa


def generate_target(params_true: RodParameters, layout: ControlPointLayout, seed: int,
                    base: Optional[Pose] = None, sampler: TargetSampler = TargetSampler()):
    """Reachable objective from a sampled equilibrium under the true parameters.

    Returns ``(objective, gamma0_star)``. The hidden initial values are kept for
    diagnostics only. With all sampler scales at zero the rest shape is returned.
    """
    base = Pose.identity() if base is None else base
    layout.validate(params_true.length)
    scales = (sampler.bend_scale, sampler.torsion_scale, sampler.transverse_force_scale, sampler.axial_force_scale)
    if not any(scales):
        g = BoundaryState(base.p, base.R, np.zeros(3), np.zeros(3))
        return Objective(positions_at(integrate_ivp(g, params_true), layout.arclengths)), g
    rng = np.random.default_rng([seed, 0])
    for _ in range(sampler.budget):
        n, m = _draw_wrench(rng, params_true, sampler)
        g = BoundaryState(base.p, base.R, n, m)
        if admissible(g, params_true, layout, sampler):
            return Objective(positions_at(integrate_ivp(g, params_true), layout.arclengths)), g
    raise GenerationError(f"no admissible target after {sampler.budget} draws (seed {seed})")


def repeat_spreads(scenario: Scenario) -> list[float]:
    """Magnitude multiplier of the initial perturbation for each repeated run."""
    n = scenario.repeat_count
    if n == 1:
        return [1.0]
    s = scenario.initial.repeat_spread
    return [1.0 - s + 2.0 * s * r / (n - 1) for r in range(n)]


def sample_initial(target: BoundaryState, params_true: RodParameters, layout: ControlPointLayout,
                   mode: BoundaryConditionMode, seed: int, spread: float,
                   initial: InitialPerturbation, sampler: TargetSampler) -> BoundaryState:
    """Starting configuration near the target; the base pose stays put when clamped.

    The perturbation direction depends only on ``seed``; ``spread`` scales its
    magnitude so repeated runs share a direction but differ in distance.
    """
    scales = (initial.wrench_scale, initial.position_m, initial.rotation_rad)
    if spread == 0.0 or not any(scales):
        return target
    rng = np.random.default_rng([seed, 1])
    L = params_true.length
    EI = _bending_stiffness(params_true)
    for _ in range(initial.budget):
        u = rng.uniform(-1.0, 1.0, (4, 3))
        n = target.n + spread * initial.wrench_scale * EI / L**2 * u[0]
        m = target.m + spread * initial.wrench_scale * EI / L * u[1]
        if mode is BoundaryConditionMode.CLAMPED_BASE:
            g = target.with_wrench(n, m)
        else:
            g = BoundaryState(
                target.p + spread * initial.position_m * u[2],
                target.R @ exp_so3(spread * initial.rotation_rad * u[3]),
                n,
                m,
            )
        if admissible(g, params_true, layout, sampler):
            return g
    raise GenerationError(f"no admissible initial configuration after {initial.budget} draws (seed {seed})")


# -- TOML ---------------------------------------------------------------------------------

_CONTROLLER_KEYS = {
    "gain": "gain",
    "damping": "damping",
    "damping_ratio": "damping_ratio",
    "convergence_tol_m": "convergence_tol",
    "sigma_min_threshold": "sigma_min_threshold",
    "ee_gain_translation_per_s": "ee_gain_translation",
    "ee_gain_rotation_per_s": "ee_gain_rotation",
    "max_rejections": "max_rejections",
}
_DELTA_KEYS = {
    "position_m": "position",
    "rotation_rad": "rotation",
    "force_n": "force",
    "moment_nm": "moment",
    "relative": "relative",
}


def _take(section: dict, allowed, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ScenarioError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    return section


def _dataclass_kwargs(cls, section: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    return dict(_take(section, names, where))


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    doc = dict(doc)
    top = {"name", "preset", "mode", "seed", "max_iterations", "repeat_count", "n_steps", "shooting_tol_m",
           "shooting_accept_m", "fail_threshold_m", "control_point_arclengths_m", "objective", "controller", "plant", "sampler",
           "initial"}
    _take(doc, top, "top level")
    try:
        preset = get_preset(doc["preset"])
        name = str(doc.get("name", doc["preset"]))
    except KeyError as e:
        raise ScenarioError(str(e)) from None
    try:
        mode = BoundaryConditionMode(doc.get("mode", "biarm"))
    except ValueError:
        raise ScenarioError(f"mode must be 'biarm' or 'clamped', got {doc.get('mode')!r}") from None

    layout = None
    if "control_point_arclengths_m" in doc:
        layout = ControlPointLayout(tuple(doc["control_point_arclengths_m"]))

    obj = _take(doc.get("objective", {}), {"source", "seed", "points_m"}, "objective")
    source = obj.get("source", "sample")
    points = None
    if source == "explicit":
        if "points_m" not in obj:
            raise ScenarioError("explicit objective needs points_m")
        points = np.asarray(obj["points_m"], dtype=float)
    elif source != "sample":
        raise ScenarioError(f"objective source must be 'sample' or 'explicit', got {source!r}")

    ctrl = dict(doc.get("controller", {}))
    deltas = _take(ctrl.pop("deltas", {}), _DELTA_KEYS, "controller.deltas")
    feedback = ctrl.pop("feedback", "vision")
    _take(ctrl, _CONTROLLER_KEYS, "controller")
    try:
        controller = ControllerConfig(
            **{_CONTROLLER_KEYS[k]: v for k, v in ctrl.items()},
            deltas=PerturbationDeltas(**{_DELTA_KEYS[k]: v for k, v in deltas.items()}),
            feedback=FeedbackMode(feedback),
        )
        scenario = Scenario(
            name=name,
            preset=preset,
            mode=mode,
            layout=layout,
            objective_points=points,
            objective_seed=obj.get("seed"),
            controller=controller,
            plant=PlantSettings(**_dataclass_kwargs(PlantSettings, doc.get("plant", {}), "plant")),
            sampler=TargetSampler(**_dataclass_kwargs(TargetSampler, doc.get("sampler", {}), "sampler")),
            initial=InitialPerturbation(**_dataclass_kwargs(InitialPerturbation, doc.get("initial", {}), "initial")),
            **{k: doc[k] for k in ("max_iterations", "repeat_count", "seed", "n_steps", "shooting_tol_m",
                                   "shooting_accept_m", "fail_threshold_m") if k in doc},
        )
    except (TypeError, ValueError) as e:
        raise ScenarioError(str(e)) from e
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ScenarioError(f"{path}: {e}") from e
    return scenario_from_dict(doc)


def with_overrides(scenario: Scenario, seed: Optional[int] = None, repeat: Optional[int] = None,
                   mismatch: Optional[tuple[float, float]] = None, marker_noise: Optional[float] = None,
                   feedback: Optional[FeedbackMode] = None) -> Scenario:
    """Copy of ``scenario`` with the command-line overrides applied."""
    plant = scenario.plant
    if mismatch is not None:
        plant = replace(plant, kt_multiplier=float(mismatch[0]), kr_multiplier=float(mismatch[1]))
    if marker_noise is not None:
        plant = replace(plant, marker_noise_sigma_m=float(marker_noise))
    controller = scenario.controller if feedback is None else replace(scenario.controller, feedback=feedback)
    return replace(
        scenario,
        seed=scenario.seed if seed is None else int(seed),
        repeat_count=scenario.repeat_count if repeat is None else int(repeat),
        plant=plant,
        controller=controller,
    )
