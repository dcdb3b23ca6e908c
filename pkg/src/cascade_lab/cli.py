"""Command-line experiment runner.

Usage:
    cascade-lab run --spec spec.json [--seed N] [--out DIR] [--jobs N] [--no-plots]
    cascade-lab study {coverage,rho,regret,censoring} --spec spec.json [...]

The spec file is a JSON document matching ExperimentSpec; the study
subcommand overrides the spec's study field.  Exit status is nonzero when a
study fails its configured thresholds.
"""

from __future__ import annotations

import argparse
import sys

from .studies import ExperimentSpec, run_study

_STUDY_ALIASES = {
    "coverage": "coverage",
    "rho": "rho",
    "regret": "regret_scaling",
    "censoring": "censoring",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", required=True, help="experiment spec JSON file")
    parser.add_argument("--seed", type=int, default=None, help="override base seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering, emit data files only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascade-lab",
                                     description="Online influence-maximization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the spec as written (single run)")
    _add_common(run_p)

    study_p = sub.add_parser("study", help="run a named study kind")
    study_p.add_argument("kind", choices=sorted(_STUDY_ALIASES))
    _add_common(study_p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExperimentSpec.from_json(args.spec)
    if args.command == "run":
        spec.study = "single_run"
    else:
        spec.study = _STUDY_ALIASES[args.kind]
    if args.seed is not None:
        spec.base_seed = args.seed

    summary = run_study(spec, out_dir=args.out, jobs=args.jobs,
                        render=not args.no_plots)
    print(f"study: {summary.study}")
    for key, value in summary.stats.items():
        print(f"  {key}: {value}")
    for path in summary.outputs:
        print(f"  wrote {path}")
    print("PASS" if summary.passed else "FAIL")
    return 0 if summary.passed else 1


if __name__ == "__main__":
    sys.exit(main())
