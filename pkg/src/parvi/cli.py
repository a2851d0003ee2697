"""Command-line interface.

Commands: validate | solve | sweep | oracle-compare | convergence.
Exit codes: 0 ok, 1 validation failure, 2 usage or input errors,
3 solver failure (diagnostics still written).

Every run directory contains a manifest.json holding the full problem
text and all resolved options, so the run can be reproduced from the
manifest alone; with a fixed seed, repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__, diagnostics as diag, fem, oracle, problem, solver, validate as val
from .expr import ExprSyntaxError
from .mesh import MeshError
from .problem import ProblemFormatError


def _manifest(out_dir, command, args, loaded=None, config=None, schedule=None, extra=None):
    data = {
        "tool": "parvi",
        "version": __version__,
        "command": command,
        "seed": args.seed,
        "out": os.path.abspath(out_dir),
        "options": extra or {},
    }
    if loaded is not None:
        data["problem"] = {
            "name": loaded.name,
            "text": loaded.text,
            "mesh": {
                "dim": loaded.mesh.dim,
                "n_nodes": loaded.mesh.n_nodes,
                "n_elements": loaded.mesh.n_elements,
            },
        }
    if config is not None:
        data["config"] = {
            "dt": config.dt,
            "t_end": config.t_end,
            "eps": config.eps,
            "newton_rtol": config.newton_rtol,
            "newton_atol": config.newton_atol,
            "max_newton": config.max_newton,
        }
    if schedule is not None:
        data["schedule"] = {"eps_list": list(schedule.eps_list),
                            "warm_start": schedule.warm_start}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _ensure_out(args, command, name):
    out = args.out or f"out_{command.replace('-', '_')}_{name}"
    os.makedirs(out, exist_ok=True)
    return out


def _say(args, message):
    if not args.quiet:
        print(message)


def cmd_validate(args):
    loaded = problem.load_problem(args.problem)
    report = val.validate(loaded.spec, loaded.mesh, seed=args.seed)
    _say(args, report.format())
    if report.passed:
        _say(args, "all checks passed")
        return 0
    _say(args, f"{len(report.failures())} check(s) failed")
    return 1


def cmd_solve(args):
    loaded = problem.load_problem(args.problem)
    config = solver.SolverConfig.from_options(
        loaded.solver_options, dt=args.dt, t_end=args.t_end, eps=args.eps)
    if config.dt > config.t_end:
        _say(args, f"warning: dt = {config.dt:g} exceeds t_end = {config.t_end:g}; "
                   "taking a single clipped step")
    out = _ensure_out(args, "solve", loaded.name)
    disc = fem.Discretization(loaded.spec, loaded.mesh)
    _manifest(out, "solve", args, loaded, config,
              extra={"eps": config.eps, "dt": config.dt, "t_end": config.t_end})
    try:
        traj = solver.solve_transient(disc, config.eps, config)
    except solver.SolveAbort as err:
        report = diag.build_report(disc, err.trajectory)
        diag.write_trajectory_csv(os.path.join(out, "trajectory.csv"),
                                  err.trajectory, disc.m)
        diag.write_diagnostics_csv(os.path.join(out, "diagnostics.csv"), report)
        print(f"solver aborted: {err}", file=sys.stderr)
        return 3
    report = diag.build_report(disc, traj)
    diag.write_trajectory_csv(os.path.join(out, "trajectory.csv"), traj, disc.m)
    diag.write_diagnostics_csv(os.path.join(out, "diagnostics.csv"), report)
    trip = report.complementarity
    _say(args, f"solved {loaded.name}: {len(traj.fields)} time levels, "
               f"penalty residual {report.penalty_residual:.6g}")
    _say(args, f"complementarity: max u = {trip[0]:.3g}, "
               f"max flux+ = {trip[1]:.3g}, max |u*flux| = {trip[2]:.3g}")
    _say(args, f"wrote {out}")
    return 0


def cmd_sweep(args):
    loaded = problem.load_problem(args.problem)
    config = solver.SolverConfig.from_options(
        loaded.solver_options, dt=args.dt, t_end=args.t_end)
    schedule = solver.PenaltySchedule.geometric(stages=args.eps_stages)
    out = _ensure_out(args, "sweep", loaded.name)
    disc = fem.Discretization(loaded.spec, loaded.mesh)
    _manifest(out, "sweep", args, loaded, config, schedule)
    stages = solver.sweep_eps(disc, schedule, config)
    rows = []
    failed = False
    for k, stage in enumerate(stages):
        if stage.failure is not None:
            failed = True
            rows.append((stage.eps, float("nan"), float("nan")))
            continue
        rows.append((stage.eps, stage.penalty_residual,
                     stage.consec_distance if stage.consec_distance is not None
                     else float("nan")))
        diag.write_diagnostics_csv(
            os.path.join(out, f"diagnostics_stage{k}.csv"), stage.report)
    diag.write_csv(os.path.join(out, "sweep.csv"),
                   ["eps", "penalty_residual", "consec_distance"], rows)
    for row in rows:
        _say(args, f"eps = {row[0]:.3g}  penalty residual = {row[1]:.6g}  "
                   f"consecutive distance = {row[2]:.6g}")
    _say(args, f"wrote {out}")
    return 3 if failed else 0


def cmd_oracle_compare(args):
    loaded = problem.load_problem(args.problem)
    config = solver.SolverConfig.from_options(
        loaded.solver_options, dt=args.dt, t_end=args.t_end)
    schedule = solver.PenaltySchedule.geometric(stages=args.eps_stages)
    out = _ensure_out(args, "oracle-compare", loaded.name)
    disc = fem.Discretization(loaded.spec, loaded.mesh)
    _manifest(out, "oracle-compare", args, loaded, config, schedule)
    try:
        stages, reference, rows = oracle.oracle_compare(disc, schedule, config)
    except (oracle.ActiveSetError, solver.SolveAbort) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 3
    diag.write_csv(os.path.join(out, "oracle_compare.csv"),
                   ["eps", "l2qt_distance"], rows)
    ref_report = diag.build_report(disc, reference)
    diag.write_diagnostics_csv(os.path.join(out, "reference_diagnostics.csv"), ref_report)
    for eps, dist in rows:
        _say(args, f"eps = {eps:.3g}  |u_eps - u_ref|_L2(QT) = {dist:.6g}")
    _say(args, f"wrote {out}")
    return 0


def cmd_convergence(args):
    out = _ensure_out(args, "convergence", args.family)
    table = diag.run_convergence_study(
        family=args.family, levels=args.levels, mode=args.mode)
    _manifest(out, "convergence", args,
              extra={"family": args.family, "levels": args.levels, "mode": args.mode})
    rows = [(r.h, r.dt, r.err_final, r.err_qt) for r in table.rows]
    diag.write_csv(os.path.join(out, "convergence.csv"),
                   ["h", "dt", "err_l2_final", "err_l2_qt"], rows)
    lines = []
    if table.exact:
        lines.append("errors at machine precision: exact")
    else:
        lines.append(f"observed order ({table.varied}) of final-time error: "
                     f"{table.order_final}")
        lines.append(f"observed order ({table.varied}) of space-time error: "
                     f"{table.order_qt}")
    diag.write_summary(os.path.join(out, "summary.txt"), lines)
    for line in lines:
        _say(args, line)
    _say(args, f"wrote {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="parvi",
        description="Transient solver for doubly nonlinear parabolic systems "
                    "with a unilateral boundary constraint, via penalty "
                    "continuation, with an active-set reference solver and "
                    "estimate-tracking diagnostics.",
    )
    parser.add_argument("--version", action="version", version=f"parvi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_problem=True):
        if with_problem:
            p.add_argument("problem", help="problem file path or bundled name")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("validate", help="check problem data admissibility")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="transient solve at one penalty parameter")
    common(p)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="penalty continuation sweep")
    common(p)
    p.add_argument("--eps-stages", type=int, default=5)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-compare",
                       help="compare the penalty sweep against the active-set solver")
    common(p)
    p.add_argument("--eps-stages", type=int, default=5)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("convergence", help="manufactured-solution order study")
    p.add_argument("family", choices=["heat", "linear"])
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--mode", choices=["space", "time"], default="space")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ProblemFormatError, ExprSyntaxError, MeshError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (solver.SolveAbort, solver.NewtonError, oracle.ActiveSetError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
