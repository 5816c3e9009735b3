"""Run the simulated experiment batches and print one summary line per batch.

Batches: bi-arm convergence per object, repeatability, clamped base,
stiffness mismatch and marker noise. Traces go to ``<out-dir>/<batch>/seed_XX``.

    python scripts/run_experiments.py --out-dir runs/experiments --seeds 10
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from dloshape.controller import FeedbackMode
from dloshape.harness import monotone_after, run_scenario
from dloshape.scenario import load_scenario, with_overrides

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

BATCHES = [
    ("biarm_rubber", "rubber_biarm.toml", {}),
    ("biarm_steel", "steel_biarm.toml", {}),
    ("biarm_sheathed", "sheathed_biarm.toml", {}),
    ("clamped_steel", "steel_clamped.toml", {}),
    ("mismatch_rubber_0.5", "rubber_biarm.toml", dict(mismatch=(0.5, 0.5))),
    ("mismatch_rubber_2.0", "rubber_biarm.toml", dict(mismatch=(2.0, 2.0))),
    ("bending_rubber_0.5", "rubber_biarm.toml", dict(mismatch=(1.0, 0.5))),
    ("bending_rubber_2.0", "rubber_biarm.toml", dict(mismatch=(1.0, 2.0))),
    ("torsion_rubber_0.5", "rubber_biarm.toml", dict(kr_axes=(1.0, 1.0, 0.5))),
    ("torsion_rubber_2.0", "rubber_biarm.toml", dict(kr_axes=(1.0, 1.0, 2.0))),
    ("bend_x_rubber_0.5", "rubber_biarm.toml", dict(kr_axes=(0.5, 1.0, 1.0))),
    ("bend_x_rubber_2.0", "rubber_biarm.toml", dict(kr_axes=(2.0, 1.0, 1.0))),
    ("noise_rubber_0.2mm", "rubber_biarm.toml", dict(marker_noise=2e-4)),
    ("wrench_feedback_rubber", "rubber_biarm.toml", dict(feedback="wrench")),
]


def run_batch(name, file, overrides, seeds, out_dir):
    overrides = dict(overrides)
    if "feedback" in overrides:
        overrides["feedback"] = FeedbackMode(overrides["feedback"])
    kr_axes = overrides.pop("kr_axes", None)
    runs = []
    for seed in seeds:
        scenario = with_overrides(load_scenario(SCENARIOS / file), seed=seed, **overrides)
        if kr_axes is not None:
            scenario = replace(scenario, plant=replace(scenario.plant, kr_axis_multipliers=kr_axes))
        target = None if out_dir is None else out_dir / name / f"seed_{seed:02d}"
        runs.extend(run_scenario(scenario, target).runs)
    return runs


def describe(name, runs):
    tol = 1e-3
    conv = sum(r.converged and r.final_mean_error < tol for r in runs)
    mono = sum(monotone_after(r.error_curve) for r in runs)
    finals = [1e3 * r.final_mean_error for r in runs]
    cos = [np.mean(r.cosine_values) for r in runs if r.cosine_values]
    iters = [len(r.records) - 1 for r in runs]
    cos_txt = f"{np.mean(cos):.4f} +/- {np.std(cos):.4f}" if cos else "n/a"
    return (f"{name:<24s} {conv:2d}/{len(runs):<2d} <1mm  monotone {mono:2d}  "
            f"final {np.mean(finals):6.3f} mm (max {np.max(finals):6.3f})  "
            f"iterations {np.median(iters):5.0f}  cosine {cos_txt}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", type=Path, help="write traces here (default: keep in memory)")
    ap.add_argument("--seeds", type=int, default=10, help="seeds per batch (default 10)")
    ap.add_argument("--only", nargs="*", help="batch names to run")
    args = ap.parse_args()

    for name, file, overrides in BATCHES:
        if args.only and name not in args.only:
            continue
        t0 = time.perf_counter()
        runs = run_batch(name, file, overrides, range(args.seeds), args.out_dir)
        print(describe(name, runs) + f"  [{time.perf_counter() - t0:.1f} s]", flush=True)

    if not args.only or "repeat_rubber" in args.only:
        out = None if args.out_dir is None else args.out_dir / "repeat_rubber"
        runs = run_scenario(load_scenario(SCENARIOS / "rubber_repeat.toml"), out).runs
        finals = [r.final_points for r in runs if r.converged]
        spread = max((np.linalg.norm(a - b, axis=1).max() for i, a in enumerate(finals) for b in finals[i + 1:]),
                     default=0.0)
        initial = [1e3 * r.initial_mean_error for r in runs]
        print(describe("repeat_rubber", runs)
              + f"  initial {min(initial):.1f}-{max(initial):.1f} mm, run-to-run {1e3 * spread:.3f} mm")


if __name__ == "__main__":
    main()
