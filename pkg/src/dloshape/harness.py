"""Closed-loop experiment runner, traces and summaries.

One run: build the plant at a perturbed configuration, fit the initial values
by shooting, then alternate measure / control step / gripper motion until the
mean control-point error drops below tolerance or the iteration budget ends.

Per run three files are written: ``run_XXX_trace.csv`` (deterministic),
``run_XXX_timing.csv`` (wall-clock, varies between reruns) and
``run_XXX_plant.csv`` (plant initial values per iteration). A scenario-level
``summary.json`` is written once all runs are done.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .controller import (
    ControllerState,
    ErrorVector,
    FeedbackMode,
    Objective,
    StepDiagnostics,
    control_step,
    cosine_similarity,
    ee_velocity_command,
)
from .errors import DLOError, GenerationError, PlantFault
from .jacobian import BoundaryConditionMode
from .plant import PlantConfig, Twist, make_plant, measure_base_wrench, measure_markers, step
from .rod import BoundaryState, RodParameters, integrate_ivp
from .scenario import Scenario, generate_target, repeat_spreads, sample_initial
from .shooting import ControlPointResidual, ShootingProblem, solve_shooting

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iterations"
STATUS_CONTROLLER_FAULT = "controller_fault"
STATUS_PLANT_FAULT = "plant_fault"
STATUS_SHOOTING = "shooting_failed"


@dataclass(frozen=True)
class TraceRecord:
    """One measurement of the loop; controller fields are ``None`` on the terminal row."""

    iteration: int
    time_s: float
    errors: np.ndarray
    mean_error: float
    max_error: float
    points: np.ndarray
    singular_values: Optional[np.ndarray] = None
    stability_margin: Optional[float] = None
    cosine_similarity: Optional[float] = None
    gain: Optional[float] = None
    rejections: Optional[int] = None


@dataclass
class RunResult:
    run_index: int
    status: str
    records: list[TraceRecord]
    plant_states: list[BoundaryState]
    step_times_ms: list[float]
    gamma0_star: BoundaryState
    initial_gamma0: BoundaryState
    shooting_residual_m: float
    message: str = ""
    estimates: list[BoundaryState] = field(default_factory=list)
    commands: list[BoundaryState] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED

    @property
    def final_mean_error(self) -> float:
        return self.records[-1].mean_error if self.records else float("inf")

    @property
    def initial_mean_error(self) -> float:
        return self.records[0].mean_error if self.records else float("inf")

    @property
    def final_points(self) -> np.ndarray:
        return self.records[-1].points

    @property
    def error_curve(self) -> np.ndarray:
        return np.array([r.mean_error for r in self.records])

    @property
    def cosine_values(self) -> list[float]:
        return [r.cosine_similarity for r in self.records if r.cosine_similarity is not None]


@dataclass
class ScenarioResult:
    scenario: Scenario
    objective: Objective
    runs: list[RunResult] = field(default_factory=list)

    def summary(self) -> dict:
        return summarize_runs(self.scenario, self.objective, self.runs)


# -- metrics ------------------------------------------------------------------------------

def cosine_similarity_metric(predicted: Iterable, measured: Iterable, eps: float = 1e-9):
    """Per-step cosine between predicted and measured displacements, plus (mean, std).

    Steps where either vector is shorter than ``eps`` are skipped (``None``).
    """
    per_step = [cosine_similarity(a, b, eps) for a, b in zip(predicted, measured)]
    kept = [c for c in per_step if c is not None]
    if not kept:
        return per_step, (float("nan"), float("nan"))
    return per_step, (float(np.mean(kept)), float(np.std(kept)))


def monotone_after(curve: Sequence[float], start: int = 2) -> bool:
    """Strictly decreasing from index ``start`` on."""
    tail = np.asarray(curve[start:], dtype=float)
    return bool(np.all(np.diff(tail) < 0.0))


def _stats(values: Sequence[float]) -> dict:
    if len(values) == 0:
        return {"mean": None, "std": None, "count": 0}
    return {"mean": float(np.mean(values)), "std": float(np.std(values)), "count": len(values)}


def summarize_runs(scenario: Scenario, objective: Objective, runs: Sequence[RunResult]) -> dict:
    per_run = []
    for r in runs:
        cos = r.cosine_values
        per_run.append({
            "run": r.run_index,
            "status": r.status,
            "converged": r.converged,
            "failed": bool(r.final_mean_error > scenario.fail_threshold_m),
            "iterations": len(r.records) - 1,
            "initial_mean_error_m": r.initial_mean_error,
            "final_mean_error_m": r.final_mean_error,
            "final_errors_m": [float(x) for x in r.records[-1].errors] if r.records else [],
            "final_points_m": r.final_points.tolist() if r.records else [],
            "monotone_after_2": monotone_after(r.error_curve),
            "cosine_similarity": _stats(cos),
            "shooting_residual_m": r.shooting_residual_m,
            "message": r.message,
        })
    run_means = [p["cosine_similarity"]["mean"] for p in per_run if p["cosine_similarity"]["count"]]
    pooled = [c for r in runs for c in r.cosine_values]
    return {
        "scenario": scenario.name,
        "preset": scenario.preset.name,
        "mode": scenario.mode.value,
        "feedback": scenario.controller.feedback.value,
        "seed": scenario.seed,
        "convergence_tol_m": scenario.controller.convergence_tol,
        "fail_threshold_m": scenario.fail_threshold_m,
        "objective_points_m": objective.points.tolist(),
        "true_params": scenario.true_params().to_dict(),
        "model_params": scenario.model_params().to_dict(),
        "n_runs": len(runs),
        "n_converged": sum(p["converged"] for p in per_run),
        "n_failed": sum(p["failed"] for p in per_run),
        # across-run mean and inter-run spread of the per-run means
        "cosine_similarity": _stats(run_means),
        "cosine_similarity_pooled": _stats(pooled),
        "runs": per_run,
    }


# -- loop ---------------------------------------------------------------------------------

def _record(iteration: int, clock: float, eps: ErrorVector, measured: np.ndarray,
            diag: Optional[StepDiagnostics], cos: Optional[float]) -> TraceRecord:
    if diag is None:
        return TraceRecord(iteration, clock, eps.norms, eps.mean, eps.max, measured, cosine_similarity=cos)
    return TraceRecord(
        iteration, clock, eps.norms, eps.mean, eps.max, measured,
        diag.singular_values, diag.stability_margin, diag.cosine_similarity, diag.gain, diag.rejections,
    )


def plant_config(scenario: Scenario, run_index: int) -> PlantConfig:
    p = scenario.plant
    return PlantConfig(
        true_params=scenario.true_params(),
        mode=scenario.mode,
        marker_noise_sigma=p.marker_noise_sigma_m,
        wrench_noise_sigma=(p.wrench_noise_sigma_n, p.wrench_noise_sigma_nm),
        dt=p.dt_s,
        max_twist=(p.max_linear_speed_m_per_s, p.max_angular_speed_rad_per_s),
        rng_seed=int(np.random.SeedSequence([scenario.seed, run_index, 2]).generate_state(1)[0]),
        bvp_tol=p.bvp_tol,
    )


def fit_acceptance(scenario: Scenario) -> float:
    """Largest usable residual of the initial fit; marker noise sets a floor on it."""
    noise_floor = 3.0 * scenario.plant.marker_noise_sigma_m * np.sqrt(3 * scenario.layout.n_points)
    return max(scenario.shooting_accept_m, noise_floor)


def run_once(scenario: Scenario, objective: Objective, gamma0_star: BoundaryState, run_index: int,
             spread: float) -> RunResult:
    """A single servo run; faults end the run and are recorded, never raised."""
    model = scenario.model_params()
    truth = scenario.true_params()
    layout = scenario.layout
    mode = scenario.mode
    cfg = scenario.controller
    pcfg = plant_config(scenario, run_index)
    rng = pcfg.rng()

    g_init = sample_initial(gamma0_star, truth, layout, mode, scenario.seed, spread,
                            scenario.initial, scenario.sampler)
    plant = make_plant(g_init, pcfg)
    records: list[TraceRecord] = []
    states = [plant.true_gamma0]
    times: list[float] = []

    measured = measure_markers(plant, layout, pcfg, rng)
    fit = solve_shooting(ShootingProblem(plant.base, ControlPointResidual(layout, measured)), model,
                         tol=scenario.shooting_tol_m)
    result = RunResult(run_index, STATUS_MAX_ITER, records, states, times, gamma0_star, g_init, fit.residual_norm)
    if not fit.residual_norm <= fit_acceptance(scenario):
        eps = ErrorVector.from_points(objective, measured)
        records.append(_record(0, plant.clock, eps, measured, None, None))
        result.status = STATUS_SHOOTING
        result.message = f"initial fit residual {fit.residual_norm:.3g} m"
        return result

    state = ControllerState(fit.gamma0)
    for k in range(scenario.max_iterations + 1):
        eps = ErrorVector.from_points(objective, measured)
        if eps.mean < cfg.convergence_tol or k == scenario.max_iterations:
            cos = None
            if state.prev_prediction is not None:
                cos = cosine_similarity(state.prev_prediction, (measured - state.prev_measured).reshape(-1))
            records.append(_record(k, plant.clock, eps, measured, None, cos))
            if eps.mean < cfg.convergence_tol:
                result.status = STATUS_CONVERGED
            break
        wrench = None
        if cfg.feedback is FeedbackMode.FORCE_SENSOR:
            wrench = measure_base_wrench(plant, pcfg, rng)
        try:
            t0 = time.perf_counter()
            out = control_step(state, measured, objective, model, layout, mode, cfg,
                               wrench_reading=wrench, base_pose=plant.base)
            times.append(1e3 * (time.perf_counter() - t0))
        except DLOError as e:
            records.append(_record(k, plant.clock, eps, measured, None, None))
            result.status = STATUS_CONTROLLER_FAULT
            result.message = str(e)
            break
        records.append(_record(k, plant.clock, eps, measured, out.diagnostics, None))
        result.estimates.append(state.gamma0_hat)
        result.commands.append(out.gamma0)
        tips = out.ee_targets
        base_twist = None
        if tips.base is not None:
            base_twist = Twist(*ee_velocity_command(plant.base, tips.base, cfg))
        tip_twist = Twist(*ee_velocity_command(plant.tip, tips.tip, cfg))
        try:
            plant = step(plant, (base_twist, tip_twist), pcfg)
        except PlantFault as e:
            result.status = STATUS_PLANT_FAULT
            result.message = str(e)
            break
        states.append(plant.true_gamma0)
        measured = measure_markers(plant, layout, pcfg, rng)
    return result


def run_scenario(scenario: Scenario, out_dir: Optional[Union[str, Path]] = None) -> ScenarioResult:
    """All repeats of a scenario, optionally written to ``out_dir``."""
    truth = scenario.true_params()
    if scenario.objective_points is not None:
        objective = Objective(scenario.objective_points)
        gamma0_star = None
    else:
        objective, gamma0_star = generate_target(truth, scenario.layout, scenario.target_seed,
                                                 sampler=scenario.sampler)
    result = ScenarioResult(scenario, objective)
    for r, spread in enumerate(repeat_spreads(scenario)):
        if gamma0_star is None:
            result.runs.append(_explicit_run(scenario, objective, r, spread))
        else:
            result.runs.append(run_once(scenario, objective, gamma0_star, r, spread))
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _explicit_run(scenario: Scenario, objective: Objective, run_index: int, spread: float) -> RunResult:
    """Explicit objectives: start from the configuration whose control points best match them."""
    model = scenario.model_params()
    fit = solve_shooting(ShootingProblem(BoundaryState.rest().pose, ControlPointResidual(scenario.layout, objective.points)),
                         model, tol=scenario.shooting_tol_m)
    if not fit.residual_norm <= scenario.shooting_accept_m:
        raise GenerationError(f"explicit objective is not reproducible by the model (residual {fit.residual_norm:.3g} m)")
    return run_once(scenario, objective, fit.gamma0, run_index, spread)


# -- files --------------------------------------------------------------------------------

def trace_header(n_points: int, n_sv: int) -> list[str]:
    return (
        ["iteration", "time_s"]
        + [f"err_{i}_m" for i in range(n_points)]
        + ["mean_error_m", "max_error_m"]
        + [f"p{i}_{a}_m" for i in range(n_points) for a in "xyz"]
        + [f"sv_{j}" for j in range(n_sv)]
        + ["stability_margin", "cosine_similarity", "gain", "rejections"]
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def trace_rows(run: RunResult, n_points: int, n_sv: int) -> list[list[str]]:
    rows = []
    for rec in run.records:
        sv = [None] * n_sv if rec.singular_values is None else list(rec.singular_values)
        rows.append(
            [str(rec.iteration), _fmt(rec.time_s)]
            + [_fmt(e) for e in rec.errors]
            + [_fmt(rec.mean_error), _fmt(rec.max_error)]
            + [_fmt(v) for v in np.ravel(rec.points)]
            + [_fmt(v) for v in sv]
            + [_fmt(rec.stability_margin), _fmt(rec.cosine_similarity), _fmt(rec.gain), _fmt(rec.rejections)]
        )
    return rows


def trace_csv(run: RunResult, n_points: int, mode: BoundaryConditionMode) -> str:
    n_sv = min(3 * n_points, mode.n_columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(n_points, n_sv))
    w.writerows(trace_rows(run, n_points, n_sv))
    return buf.getvalue()


PLANT_HEADER = ["iteration"] + [f"p{a}" for a in "xyz"] + [f"r{i}{j}" for i in range(3) for j in range(3)] \
    + [f"n{a}" for a in "xyz"] + [f"m{a}" for a in "xyz"]


def plant_csv(run: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLANT_HEADER)
    for k, g in enumerate(run.plant_states):
        w.writerow([str(k)] + [_fmt(v) for v in g.to_row()])
    return buf.getvalue()


def timing_csv(run: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "step_ms"])
    for k, t in enumerate(run.step_times_ms):
        w.writerow([str(k), f"{t:.6f}"])
    return buf.getvalue()


def write_outputs(result: ScenarioResult, out_dir: Union[str, Path]) -> Path:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    n = result.scenario.layout.n_points
    for run in result.runs:
        stem = directory / f"run_{run.run_index:03d}"
        Path(f"{stem}_trace.csv").write_text(trace_csv(run, n, result.scenario.mode))
        Path(f"{stem}_plant.csv").write_text(plant_csv(run))
        Path(f"{stem}_timing.csv").write_text(timing_csv(run))
    (directory / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return directory


# -- reading back -------------------------------------------------------------------------

def read_trace(path: Union[str, Path]) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def summarize_directory(directory: Union[str, Path]) -> dict:
    """Recompute the headline statistics from trace files alone."""
    directory = Path(directory)
    meta = json.loads((directory / "summary.json").read_text())
    tol = meta["convergence_tol_m"]
    fail = meta["fail_threshold_m"]
    runs = []
    run_means = []
    pooled = []
    for path in sorted(directory.glob("run_*_trace.csv")):
        _, rows = read_trace(path)
        curve = [float(r["mean_error_m"]) for r in rows]
        cos = [float(r["cosine_similarity"]) for r in rows if r["cosine_similarity"]]
        pooled.extend(cos)
        if cos:
            run_means.append(float(np.mean(cos)))
        runs.append({
            "trace": path.name,
            "iterations": len(rows) - 1,
            "initial_mean_error_m": curve[0],
            "final_mean_error_m": curve[-1],
            "converged": curve[-1] < tol,
            "failed": curve[-1] > fail,
            "monotone_after_2": monotone_after(curve),
        })
    return {
        "directory": str(directory),
        "n_runs": len(runs),
        "n_converged": sum(r["converged"] for r in runs),
        "n_failed": sum(r["failed"] for r in runs),
        "cosine_similarity": _stats(run_means),
        "cosine_similarity_pooled": _stats(pooled),
        "runs": runs,
    }


def shape_at_iteration(directory: Union[str, Path], run_trace: Union[str, Path], iteration: int):
    """Plant shape at a logged iteration, re-integrated from the stored initial values."""
    directory = Path(directory)
    meta = json.loads((directory / "summary.json").read_text())
    params = RodParameters.from_dict(meta["true_params"])
    trace = Path(run_trace)
    plant_path = trace.with_name(trace.name.replace("_trace.csv", "_plant.csv"))
    with open(plant_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not 0 <= iteration < len(rows):
        raise IndexError(f"iteration {iteration} not in {plant_path.name} (0..{len(rows) - 1})")
    v = [float(rows[iteration][k]) for k in PLANT_HEADER[1:]]
    g = BoundaryState(v[0:3], np.reshape(v[3:12], (3, 3)), v[12:15], v[15:18])
    return integrate_ivp(g, params)
