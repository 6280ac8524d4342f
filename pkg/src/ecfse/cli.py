"""Command line entry point (``ecfse``).

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import __version__
from .estimators import ESTIMATORS, make_estimator
from .experiment import ExperimentConfig, run_experiment, run_pmu_sweep
from .grid import CaseFormatError, load_case
from .measurements import NoiseSpec, load_placement, measurements_from_json, measurements_to_json, \
    synthesize_measurements
from .powerflow import PowerFlowError, solve_power_flow, true_state_to_json
from .result import EstimationError, estimated_state_to_json

EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _case(args):
    try:
        return load_case(args.case)
    except (OSError, CaseFormatError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load case {args.case!r}: {exc}") from exc


def _plan(args, case):
    spec = args.placement or case.name
    try:
        return load_placement(spec).validate(case)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load placement {spec!r}: {exc}") from exc


def _noise(args):
    return NoiseSpec(kind=args.noise)


def _methods(text):
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in ESTIMATORS]
    if not methods or bad:
        raise UsageError(f"methods must be a comma list of {sorted(ESTIMATORS)}")
    return methods


def _finite(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


def cmd_solve_pf(args):
    case = _case(args)
    truth = solve_power_flow(case)
    _emit(true_state_to_json(truth), args.out)


def cmd_synth(args):
    case = _case(args)
    truth = solve_power_flow(case)
    ms = synthesize_measurements(case, truth, _plan(args, case), _noise(args), args.seed)
    _emit(measurements_to_json(ms), args.out)


def cmd_estimate(args):
    case = _case(args)
    truth = solve_power_flow(case)
    if args.measurements:
        try:
            with open(args.measurements) as fh:
                ms = measurements_from_json(fh.read())
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"cannot read measurements: {exc}") from exc
    else:
        ms = synthesize_measurements(case, truth, _plan(args, case), _noise(args), args.seed)
    est = make_estimator(args.method, case)
    try:
        est.fit(ms)
    except (KeyError, TypeError) as exc:
        raise DataError(f"measurements do not match the case: {exc}") from exc
    idx = est.indices(truth)
    doc = {
        "format": "ecfse-estimate-report/1",
        "case": case.name,
        "method": args.method,
        "seed": ms.seed,
        "state_error": _finite(idx["state_error"]),
        "variance_ratio": _finite(idx["variance_ratio"]),
        "estimate": json.loads(estimated_state_to_json(est.state_)),
    }
    _emit(json.dumps(doc, indent=1), args.out)


def _config(args, pmu_level=None):
    try:
        return ExperimentConfig(case=args.case, placement=args.placement or args.case, noise=_noise(args),
                                methods=_methods(args.methods), trials=args.trials, seed_base=args.seed_base,
                                pmu_level=pmu_level)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _summary_table(rows):
    head = f"{'level':>6} {'method':>6} {'pmus':>5} {'ok':>4} {'mean_state_err':>15} " \
           f"{'mean_var_ratio':>15} {'mean_time_s':>12} {'median_time_s':>13}"
    lines = [head]
    for level, n_pmu, method, s in rows:
        lines.append(f"{level:>6} {method:>6} {n_pmu:>5} {s['trials'] - s['failures']:>4} "
                     f"{s['mean_state_error']:>15.4e} {s['mean_variance_ratio']:>15.4f} "
                     f"{s['mean_wall_time']:>12.5f} {s['median_wall_time']:>13.5f}")
    return "\n".join(lines) + "\n"


def _check_inputs(args):
    case = _case(args)
    _plan(args, case)


def cmd_benchmark(args):
    _check_inputs(args)
    report = run_experiment(_config(args))
    report.write(args.out)
    rows = [("-", report.n_pmu, m, s) for m, s in report.summary().items()]
    sys.stdout.write(_summary_table(rows))


def cmd_sweep_pmu(args):
    _check_inputs(args)
    try:
        levels = [float(x) for x in args.levels.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --levels: {exc}") from exc
    if not levels or any(not 0 < x <= 1 for x in levels):
        raise UsageError("levels must lie in (0, 1]")
    results = run_pmu_sweep(_config(args), levels)
    rows, table = [], []
    for level, report in results:
        report.write(os.path.join(args.out, f"level_{level:g}"))
        for m, s in report.summary().items():
            rows.append((f"{level:g}", report.n_pmu, m, s))
            table.append([f"{level:g}", m, report.n_pmu, repr(s["mean_wall_time"]), repr(s["median_wall_time"]),
                          repr(s["mean_state_error"]), repr(s["mean_variance_ratio"])])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write("level,method,n_pmu,mean_wall_time,median_wall_time,mean_state_error,mean_variance_ratio\n")
        for t in table:
            fh.write(",".join(str(x) for x in t) + "\n")
    sys.stdout.write(_summary_table(rows))


def build_parser():
    p = _Parser(prog="ecfse", description="Equivalent-circuit hybrid state estimation.")
    p.add_argument("--version", action="version", version=f"ecfse {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, placement=True, noise=True):
        sp.add_argument("--case", default="ieee14", help="bundled case name or .m/.json path")
        if placement:
            sp.add_argument("--placement", default=None, help="bundled placement name or plan JSON (default: case name)")
        if noise:
            sp.add_argument("--noise", default="uniform", choices=["uniform", "gaussian", "none"])

    sp = sub.add_parser("solve-pf", help="solve the power flow and write the true state")
    common(sp, placement=False, noise=False)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_solve_pf)

    sp = sub.add_parser("synth", help="synthesize a measurement set")
    common(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("estimate", help="run one estimator and print its indices")
    common(sp)
    sp.add_argument("--method", default="lecf", choices=sorted(ESTIMATORS))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--measurements", default=None, help="measurement JSON (default: synthesize)")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_estimate)

    for name, func, helptext in (("benchmark", cmd_benchmark, "repeat trials and write CSV and JSON"),
                                 ("sweep-pmu", cmd_sweep_pmu, "benchmark across PMU penetration levels")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--methods", default="lecf,necf,wls")
        sp.add_argument("--trials", type=int, default=100)
        sp.add_argument("--seed-base", type=int, default=0)
        sp.add_argument("--out", default=f"{name}-out")
        if name == "sweep-pmu":
            sp.add_argument("--levels", default="0.2,0.5,1.0")
        sp.set_defaults(func=func)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"ecfse: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ecfse: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, PowerFlowError) as exc:
        print(f"ecfse: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"ecfse: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
