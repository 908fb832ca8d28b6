"""Command-line front end.

Exit codes: 0 success, 1 invalid arguments, 2 numeric non-convergence,
3 validation failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .exceptions import ConvergenceError, OutputError
from .sweep import (
    Mode,
    SpecError,
    SweepSpec,
    emit_outputs,
    run,
    spec_from_mapping,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONCONVERGENCE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

SUBCOMMANDS = {
    "eval": Mode.EVAL,
    "sweep-area": Mode.SWEEP_AREA,
    "sweep-capacity": Mode.SWEEP_MATCHED_CAPACITY,
    "simulate": Mode.SIMULATE,
    "validate": Mode.VALIDATE,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="JSON file with SweepSpec fields; flags override it")
    p.add_argument("--lambda-u", type=float, help="user density per m^2 (default 1e-3)")
    p.add_argument("--area", type=float, help="cell area in m^2 for eval/simulate (default 1e4)")
    p.add_argument("--capacity", type=int, action="append", help="flow-table capacity; repeatable")
    p.add_argument("--d-ctrl", type=float, help="controller fetch delay in seconds (default 1)")
    p.add_argument("--area-min", type=float)
    p.add_argument("--area-max", type=float)
    p.add_argument("--points", type=int)
    spacing = p.add_mutually_exclusive_group()
    spacing.add_argument("--log", dest="spacing", action="store_const", const="log",
                         help="log-spaced area grid (default)")
    spacing.add_argument("--linear", dest="spacing", action="store_const", const="linear")
    p.add_argument("--c-min", type=int)
    p.add_argument("--c-max", type=int)
    p.add_argument("--c-step", type=int)
    p.add_argument("--slots", type=int, help="Monte Carlo slots (default 1e5)")
    p.add_argument("--seed", type=int)
    p.add_argument("--estimator", choices=["packet_level", "conditional"])
    p.add_argument("--workers", type=int, help="threads for Monte Carlo blocks")
    p.add_argument("--rel-tol", type=float, help="series truncation tolerance")
    p.add_argument("--constant-mode", choices=["corrected", "paper-literal"])
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--no-plot", action="store_true", help="skip the SVG plot")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowdelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common_flags()
    helps = {
        "eval": "expected delay at one area, for each capacity",
        "sweep-area": "delay versus cell area for each capacity",
        "sweep-capacity": "delay versus capacity with the load matched to it",
        "simulate": "Monte Carlo estimate next to the analytic value",
        "validate": "closed form vs series vs Monte Carlo report",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _flag_overrides(args) -> dict:
    out: dict = {}
    simple = {
        "lambda_u": args.lambda_u,
        "area": args.area,
        "d_ctrl": args.d_ctrl,
        "capacities": args.capacity,
        "constant_mode": args.constant_mode,
    }
    out.update({k: v for k, v in simple.items() if v is not None})
    sections = {
        "area_grid": {"min": args.area_min, "max": args.area_max, "points": args.points, "spacing": args.spacing},
        "capacity_grid": {"min": args.c_min, "max": args.c_max, "step": args.c_step},
        "sim": {"slots": args.slots, "seed": args.seed, "estimator": args.estimator, "workers": args.workers},
        "tolerance": {"rel_tol": args.rel_tol},
    }
    for name, values in sections.items():
        values = {k: v for k, v in values.items() if v is not None}
        if values:
            out[name] = values
    return out


def make_spec(args) -> SweepSpec:
    mode = SUBCOMMANDS[args.command]
    spec = SweepSpec(mode=mode)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        if "mode" in data and str(data["mode"]).replace("-", "_") != mode.value:
            raise UsageError(f"config mode {data['mode']!r} conflicts with subcommand {args.command!r}")
        spec = spec_from_mapping(data, spec)
    spec = spec_from_mapping(_flag_overrides(args), spec)
    if mode is Mode.VALIDATE and spec.constant_mode.value != "corrected":
        raise UsageError("validate always compares both constant modes; drop --constant-mode")
    return dataclasses.replace(spec, mode=mode)


def _print_summary(rows, report):
    for r in rows:
        line = f"b={r.b:.6g} C={r.capacity} delay/d_ctrl={r.normalized_delay:.10g} ({r.method})"
        if r.mc_mean is not None:
            line += f" mc={r.mc_mean:.6g}+/-{r.mc_stderr:.2g}"
        print(line)
    if report is not None:
        cvd, mc = report["closed_vs_direct"], report["monte_carlo"]
        hl = report["paper_literal"]["highlight"]
        print(f"closed vs direct: max rel deviation {cvd['max_rel_deviation']:.3g} "
              f"(limit {cvd['threshold']:g}) {'PASS' if cvd['passed'] else 'FAIL'}")
        print(f"monte carlo: max |z| {mc['max_abs_z']:.3g} (limit {mc['threshold_z']:g}) "
              f"{'PASS' if mc['passed'] else 'FAIL'}")
        print(f"paper constant at b=1, C=10: {hl['paper_literal']:.6g} vs corrected {hl['corrected']:.6g}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec = make_spec(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SpecError as exc:
        print(f"flowdelay: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    try:
        rows, report = run(spec)
    except SpecError as exc:
        print(f"flowdelay: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"flowdelay: numeric non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE

    try:
        paths = emit_outputs(rows, report, args.out_dir, spec, plot=not args.no_plot)
    except OutputError as exc:
        print(f"flowdelay: {exc}", file=sys.stderr)
        return EXIT_IO

    _print_summary(rows, report)
    for p in paths:
        print(f"wrote {p}")
    if report is not None and not report["passed"]:
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
