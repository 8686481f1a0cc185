"""Command line front end: run, sweep, validate.

Exit codes: 0 success, 1 numerical failure or failed sweep cells,
2 bad config or arguments.
"""

import argparse
import os
import sys

from .errors import InvariantError, NumericalError, ScenarioError
from .evolution import PhysicsParams
from .scenario import (
    parse_scenario_file,
    run_scenario,
    sweep,
    write_sweep_table,
    _n_steps,
)


def _axis_values(spec: str) -> list:
    try:
        key, rhs = spec.split("=", 1)
        start, stop, step = (float(x) for x in rhs.split(":"))
    except ValueError:
        raise ScenarioError(
            f"axis must look like gamma_tau=start:stop:step, got {spec!r}"
        ) from None
    if key != "gamma_tau":
        raise ScenarioError(f"only the gamma_tau axis is supported, got {key!r}")
    if step <= 0 or stop < start:
        raise ScenarioError(f"bad axis range {rhs!r}")
    count = int((stop - start) / step + 1e-9) + 1
    return [start + k * step for k in range(count)]


def _photon_list(spec: str) -> list:
    try:
        return [int(x) for x in spec.split(",") if x != ""]
    except ValueError:
        raise ScenarioError(
            f"--photons takes a comma list of integers, got {spec!r}"
        ) from None


def _cmd_run(args) -> int:
    s = parse_scenario_file(args.config)
    summary = run_scenario(s, args.out)
    for engine, data in summary["engines"].items():
        report = data["steady_state"]
        flag = "converged" if report["converged"] else "NOT converged"
        print(f"{engine}: steady state {report['value']:.6g} ({flag})")
    if "max_abs_diff" in summary:
        print(f"engine difference: max {summary['max_abs_diff']:.3g}")
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {os.path.join(args.out, s.trace_name)} "
          f"and {os.path.join(args.out, s.summary_name)}")
    return 0


def _cmd_sweep(args) -> int:
    base = parse_scenario_file(args.config)
    rows = sweep(base, _axis_values(args.axis), _photon_list(args.photons),
                 out_dir=args.out if args.cell_files else None,
                 workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "sweep.csv")
    write_sweep_table(table, rows)
    failed = [r for r in rows if r["error"]]
    print(f"wrote {table}: {len(rows)} cells, {len(failed)} failed")
    for r in failed:
        print(f"cell gamma_tau={r['gamma_tau']:g} n={r['n']}: {r['error']}",
              file=sys.stderr)
    return 1 if failed else 0


def _cmd_validate(args) -> int:
    s = parse_scenario_file(args.config)
    print(f"ok: method={s.method} gamma={s.gamma:g} "
          f"tau={'none' if s.tau is None else format(s.tau, 'g')} "
          f"phi_over_2pi={s.phi_over_2pi:g} t_max={s.t_max:g}")
    if s.method in ("mps", "both"):
        bins = _n_steps(s.t_max, s.dt)
        l = PhysicsParams(gamma=s.gamma, dt=s.dt, tau=s.tau or 0.0,
                          feedback=s.feedback).delay_bins
        print(f"mps: {bins} bins of {s.dt:g} ps, delay {l} bins")
    if s.method in ("heisenberg", "both"):
        print(f"heisenberg: {_n_steps(s.t_max, s.h)} steps of {s.h:g} ps")
    for w in s.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Emitter-in-a-half-waveguide simulator: time-bin MPS "
                    "and matrix-element engines with optional feedback.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one config and write trace/summary")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="steady-state table over gamma*tau")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True,
                         help="gamma_tau=start:stop:step (inclusive)")
    p_sweep.add_argument("--photons", required=True,
                         help="comma list of photon numbers, 0 = excited emitter")
    p_sweep.add_argument("--out", default=".", help="output directory")
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="worker processes (default: SIM_WORKERS or all cores)")
    p_sweep.add_argument("--cell-files", action="store_true",
                         help="also write per-cell trace/summary files")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_val = sub.add_parser("validate", help="parse a config and report derived sizes")
    p_val.add_argument("config")
    p_val.set_defaults(fn=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, InvariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
