"""Command-line front end.

    subgqmc <mode> --config <path> [--seed S] [--out DIR] [--force]

Modes: scaling, integrate, diagnose, verify, generate. The config file is
JSON (see ExperimentConfig.from_dict for the schema); command-line flags
override the corresponding config fields.

Exit codes: 0 on success, 1 when a run or a verification check fails,
2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .balancing import WalkFailure
from .experiments import (
    MODES,
    ExperimentConfig,
    prepare_out_dir,
    run_diagnose,
    run_generate,
    run_integrate,
    run_scaling,
    run_verify,
    thread_budget,
    validate_mode_requirements,
)

_MODE_HELP = {
    "scaling": "sweep estimators over n_list and fit error-vs-n slopes",
    "integrate": "integrate one function at the largest n per estimator",
    "diagnose": "record split discrepancies and profile their tails",
    "verify": "run the invariant suite and report pass/fail per check",
    "generate": "build one partition tree and export its leaves as CSV",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgqmc",
        description="Randomized quasi-Monte Carlo experiments built on "
                    "balanced dyadic partitioning.",
        epilog="The SUBGQMC_THREADS environment variable caps worker "
               "threads (default 1); results are identical at any count.",
    )
    sub = parser.add_subparsers(dest="mode", required=True, metavar="MODE")
    for mode in MODES:
        sp = sub.add_parser(mode, help=_MODE_HELP[mode], description=_MODE_HELP[mode])
        sp.add_argument("--config", required=True,
                        help="path to a JSON experiment config")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed (default: config value, 0 if absent)")
        sp.add_argument("--out", default=None,
                        help="override the config output_path")
        sp.add_argument("--force", action="store_true",
                        help="overwrite non-empty output directories (default: refuse)")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    path = Path(args.config)
    obj = json.loads(path.read_text())
    if not isinstance(obj, dict):
        raise ValueError("config file must hold a JSON object")
    file_mode = obj.get("mode")
    if file_mode is not None and file_mode != args.mode:
        raise ValueError(
            f"config file says mode {file_mode!r} but the command line asked "
            f"for {args.mode!r}")
    obj["mode"] = args.mode
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.out is not None:
        obj["output_path"] = args.out
    if args.force:
        obj["force"] = True
    config = ExperimentConfig.from_dict(obj, base_dir=path.parent)
    validate_mode_requirements(config)
    return config


def _print_scaling(result) -> None:
    for s in result.summaries:
        print(f"{s.estimator:>13}  n={s.n:<5d} rmse={s.rmse:.6e} "
              f"mean={s.mean_error:+.3e} se={s.stderr:.3e}")
    for est, fit in result.slopes.items():
        print(f"{est:>13}  slope={fit.slope:+.3f} "
              f"ci=[{fit.ci_low:+.3f}, {fit.ci_high:+.3f}] "
              f"all-n={fit.slope_all_n:+.3f}")


def _dispatch(config: ExperimentConfig) -> int:
    if config.mode == "scaling":
        result = run_scaling(config)
        if config.output_path is not None:
            result.write(config.output_path, force=config.force)
        _print_scaling(result)
        return 0
    if config.mode == "integrate":
        results = run_integrate(config)
        for r in results:
            print(f"{r['estimator']:>13}  n={r['n']:<5d} "
                  f"estimate={r['estimate']:+.10f} error={r['error']:+.3e}")
        if config.output_path is not None:
            out = prepare_out_dir(config.output_path, config.force)
            (out / "integrate_results.json").write_text(
                json.dumps(results, indent=1) + "\n")
        return 0
    if config.mode == "diagnose":
        summary = run_diagnose(config)
        print(f"subgaussian constant {summary['subgaussian_constant']:.3f} "
              f"(reference bound {summary['reference_bound']:.3f}), "
              f"artifacts in {config.output_path}")
        return 0
    if config.mode == "verify":
        report = run_verify(config)
        for c in report.checks:
            kind = "statistical" if c.statistical else "exact"
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<22s} "
                  f"[{kind}] {c.detail}")
        print(f"verification {'passed' if report.passed else 'FAILED'} "
              f"(seed {report.seed})")
        return 0 if report.passed else 1
    if config.mode == "generate":
        summary = run_generate(config)
        print(f"wrote {summary['leaf_count']} leaf files "
              f"({summary['points_total']} points, h={summary['h']}) "
              f"to {config.output_path} in {summary['wall_seconds']:.2f}s; "
              f"per-point cost {summary['per_point_cost']:.1f}")
        return 0
    raise ValueError(f"unknown mode {config.mode!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        thread_budget()
        config = _load_config(args)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"subgqmc: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _dispatch(config)
    except FileExistsError as exc:
        print(f"subgqmc: {exc}", file=sys.stderr)
        return 1
    except WalkFailure as exc:
        print(f"subgqmc: balancing walk failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"subgqmc: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
