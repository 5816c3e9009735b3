"""Command-line entry point: ``dloshape run | list-presets | dump-shape | summarize``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .controller import FeedbackMode
from .errors import DLOError
from .harness import run_scenario, shape_at_iteration, summarize_directory
from .presets import PRESETS
from .scenario import load_scenario, with_overrides

MAX_EXIT = 125


def _cmd_run(args) -> int:
    scenario = with_overrides(
        load_scenario(args.scenario),
        seed=args.seed,
        repeat=args.repeat,
        mismatch=args.mismatch,
        marker_noise=args.marker_noise,
        feedback=None if args.mode is None else FeedbackMode(args.mode),
    )
    out_dir = Path(args.out_dir) / scenario.name
    result = run_scenario(scenario, out_dir)
    summary = result.summary()
    for run in summary["runs"]:
        print(
            f"run {run['run']:3d}  {run['status']:<16s} iterations {run['iterations']:4d}  "
            f"error {1e3 * run['initial_mean_error_m']:8.3f} -> {1e3 * run['final_mean_error_m']:7.3f} mm"
        )
    cos = summary["cosine_similarity"]
    cos_text = "n/a" if cos["mean"] is None else f"{cos['mean']:.4f} +/- {cos['std']:.4f}"
    print(f"{summary['n_converged']}/{summary['n_runs']} converged, {summary['n_failed']} failed, "
          f"cosine similarity {cos_text}")
    print(f"outputs in {out_dir}")
    return min(summary["n_runs"] - summary["n_converged"], MAX_EXIT)


def _cmd_list_presets(args) -> int:
    for p in PRESETS.values():
        params = p.params()
        print(
            f"{p.name:<16s} L={p.length_m:g} m  E={p.youngs_modulus_pa:.3g} Pa  nu={p.poisson_ratio:g}  "
            f"markers={p.n_markers}  EI={params.kr[0, 0]:.4g} N m^2  ({p.description})"
        )
    return 0


def _cmd_dump_shape(args) -> int:
    trace = Path(args.trace)
    shape = shape_at_iteration(trace.parent, trace, args.iteration)
    if args.output:
        Path(args.output).write_text(shape.to_csv())
    else:
        sys.stdout.write(shape.to_csv())
    return 0


def _cmd_summarize(args) -> int:
    summary = summarize_directory(args.scenario_dir)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return min(summary["n_runs"] - summary["n_converged"], MAX_EXIT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dloshape", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file and write traces")
    run.add_argument("scenario", help="scenario TOML file")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out-dir", default="runs", help="output root (default: runs/)")
    run.add_argument("--repeat", type=int, help="override repeat_count")
    run.add_argument("--mismatch", type=float, nargs=2, metavar=("KT", "KR"),
                     help="plant stiffness multipliers on Kt and Kr")
    run.add_argument("--marker-noise", type=float, metavar="M", help="marker noise sigma in meters")
    run.add_argument("--mode", choices=[m.value for m in FeedbackMode], help="initial-value feedback")
    run.set_defaults(func=_cmd_run)

    lp = sub.add_parser("list-presets", help="show the object presets")
    lp.set_defaults(func=_cmd_list_presets)

    ds = sub.add_parser("dump-shape", help="plant shape CSV at one iteration of a run")
    ds.add_argument("trace", help="run_XXX_trace.csv inside a scenario output directory")
    ds.add_argument("iteration", type=int)
    ds.add_argument("-o", "--output", help="write to a file instead of stdout")
    ds.set_defaults(func=_cmd_dump_shape)

    sm = sub.add_parser("summarize", help="recompute statistics from the traces of a scenario directory")
    sm.add_argument("scenario_dir")
    sm.set_defaults(func=_cmd_summarize)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DLOError, OSError, KeyError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if args.command != "run" else MAX_EXIT


if __name__ == "__main__":
    sys.exit(main())
