"""Post-processing: energy trajectories, penalty residual, complementarity,
convergence-order tables, CSV and summary output.

Constants in the underlying a-priori bounds are existential, so the
diagnostics report trajectories, ratios and fitted shapes rather than
asserting absolute values.  All writers emit comma-separated values with
'.' decimals, a header row, LF endings and shortest round-trip floats, so
repeated runs are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fem
from .validate import legendre_psi_batch

__all__ = [
    "DiagnosticsReport",
    "energy_trajectory",
    "penalty_residual",
    "complementarity_report",
    "complementarity_history",
    "gronwall_fit",
    "build_report",
    "convergence_table",
    "heat_exact",
    "make_heat_problem",
    "make_linear_problem",
    "run_convergence_study",
    "write_csv",
]

_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class DiagnosticsReport:
    """Quantities the a-priori estimates bound, per trajectory."""

    rows: list  # (t, psi_energy, h1_accum, beta_pairing, beta_pairing_raw)
    penalty_residual: float
    complementarity: tuple  # (max u on gamma3, max positive flux, max |u*flux|)
    gronwall: tuple  # fitted (A, C, min bound slack)
    vi_residual: float | None = None


def energy_trajectory(traj, disc):
    """Per-level lumped energy and running H1-norm accumulation.

    Returns rows (t, sum_i w_i psi(u_i), int_0^t ||u||_H1^2) with the time
    integral accumulated by the trapezoidal rule.
    """
    rows = []
    times = traj.times
    h1sq = [disc.h1_norm_sq(f.values) for f in traj.fields]
    psi = [float(np.dot(disc.lumped, legendre_psi_batch(disc.spec, f.values)))
           for f in traj.fields]
    accum = 0.0
    for k, t in enumerate(times):
        if k > 0:
            accum += 0.5 * (h1sq[k] + h1sq[k - 1]) * (t - times[k - 1])
        rows.append((t, psi[k], accum))
    return rows


def penalty_residual(traj):
    """Time integral of the recorded penalty pairing |<beta(u),u>/eps|."""
    times = np.asarray(traj.times)
    vals = np.abs(np.asarray(traj.pairings))
    if len(times) < 2:
        return 0.0
    return float(_trapz(vals, times))


def complementarity_report(disc, values, flux):
    """Triple (max u on gamma3, max positive flux proxy, max |u*flux|).

    ``flux`` is the penalty-free residual at the constrained dofs; its
    positive part measures violation of the outflow sign condition.
    """
    con = disc.constrained_dofs
    if len(con) == 0:
        return (0.0, 0.0, 0.0)
    u = np.asarray(values).ravel()[con]
    flux = np.asarray(flux)
    return (
        float(np.max(u)),
        float(np.max(np.maximum(flux, 0.0))),
        float(np.max(np.abs(u * flux))),
    )


def complementarity_history(disc, traj):
    """Worst complementarity triple over all recorded steps."""
    worst = (0.0, 0.0, 0.0)
    if len(disc.constrained_dofs) == 0:
        return worst
    for st in traj.stats:
        trip = (
            float(np.max(st.gamma3_u)),
            float(np.max(np.maximum(st.gamma3_flux, 0.0))),
            float(np.max(np.abs(st.gamma3_u * st.gamma3_flux))),
        )
        worst = tuple(max(a, b) for a, b in zip(worst, trip))
    return worst


def gronwall_fit(times, psi):
    """Smallest grid constant C with psi(t) <= A (1 + C t exp(C t)).

    A is the initial energy with a floor (the underlying bound carries an
    additive constant, so a zero start must not force C to blow up); the
    slack returned is min_t of bound - psi, nonnegative on success.
    """
    times = np.asarray(times)
    psi = np.asarray(psi)
    A = max(float(psi[0]), 1e-3 * float(np.max(psi)), 1e-12)
    for C in [0.0] + [2.0**k for k in range(-6, 8)]:
        with np.errstate(over="ignore"):
            bound = A * (1.0 + C * times * np.exp(np.minimum(C * times, 700.0)))
        slack = float(np.min(bound - psi))
        if slack >= -1e-12 * (1.0 + A):
            return (A, C, slack)
    return (A, math.inf, float("-inf"))


def build_report(disc, traj, vi_bank=None):
    rows = []
    energy = energy_trajectory(traj, disc)
    for (t, psi, h1), pair, raw in zip(energy, traj.pairings, traj.pairings_raw):
        rows.append((t, psi, h1, pair, raw))
    vi = fem.vi_residual(disc, traj, vi_bank) if vi_bank is not None else None
    return DiagnosticsReport(
        rows=rows,
        penalty_residual=penalty_residual(traj),
        complementarity=complementarity_history(disc, traj),
        gronwall=gronwall_fit([r[0] for r in rows], [r[1] for r in rows]),
        vi_residual=vi,
    )


# -- manufactured solutions -------------------------------------------------


def heat_exact(pts, t):
    """Decaying sine mode: the classical solution for u0 = sin(pi x)."""
    x = np.asarray(pts)[:, 0]
    return (math.exp(-math.pi**2 * t) * np.sin(math.pi * x))[:, None]


def linear_exact(pts, t):
    x = np.asarray(pts)[:, 0]
    return x[:, None]


_HEAT_TEXT = """\
[problem]
m = 1
dim = 1
nu = 1
p = 1
alpha = 1

[coefficients]
B1 = u1
K11 = 1
F1 = 0

[initial]
u01 = sin(pi*x)

[boundary]
gamma1 = left right

[domain]
kind = interval
n = {n}

[solver]
dt = {dt}
t_end = {t_end}
"""

_LINEAR_TEXT = """\
[problem]
m = 1
dim = 1
nu = 1
p = 1
alpha = 1

[coefficients]
B1 = u1
K11 = 1
F1 = 0

[initial]
u01 = x

[boundary]
gamma1 = left right
dirichlet1 = x

[domain]
kind = interval
n = {n}

[solver]
dt = {dt}
t_end = {t_end}
"""


def make_heat_problem(n, dt, t_end=0.1):
    from .problem import parse_problem_text

    return parse_problem_text(_HEAT_TEXT.format(n=n, dt=dt, t_end=t_end), name="heat-mms")


def make_linear_problem(n, dt, t_end=0.1):
    from .problem import parse_problem_text

    return parse_problem_text(_LINEAR_TEXT.format(n=n, dt=dt, t_end=t_end), name="linear-mms")


@dataclass
class ConvergenceRow:
    h: float
    dt: float
    err_final: float  # L2(Omega) at the final time
    err_qt: float  # L2(Q_T)


@dataclass
class ConvergenceTable:
    rows: list
    order_final: float | None
    order_qt: float | None
    varied: str  # 'h' or 'dt'
    exact: bool = False


def convergence_table(rows, varied="h"):
    """Least-squares observed orders from (resolution, error) rows.

    Fewer than 3 resolutions yields no order; errors at machine precision
    flag the table as 'exact' instead of reporting a meaningless slope.
    """
    rows = sorted(rows, key=lambda r: getattr(r, varied), reverse=True)
    errs_f = np.array([r.err_final for r in rows])
    errs_q = np.array([r.err_qt for r in rows])
    res = np.array([getattr(r, varied) for r in rows])
    if np.all(errs_f < 1e-12):
        return ConvergenceTable(rows, None, None, varied, exact=True)
    if len(rows) < 3:
        return ConvergenceTable(rows, None, None, varied)
    of = float(np.polyfit(np.log(res), np.log(np.maximum(errs_f, 1e-300)), 1)[0])
    oq = float(np.polyfit(np.log(res), np.log(np.maximum(errs_q, 1e-300)), 1)[0])
    return ConvergenceTable(rows, of, oq, varied)


def _solve_error(loaded, exact):
    from . import solver

    disc = fem.Discretization(loaded.spec, loaded.mesh)
    config = solver.SolverConfig.from_options(loaded.solver_options)
    traj = solver.solve_transient(disc, config.eps, config)
    err_final = disc.l2_error(traj.fields[-1].values, exact, traj.times[-1])
    sq = np.array([disc.l2_error(f.values, exact, f.t) ** 2 for f in traj.fields])
    err_qt = float(np.sqrt(_trapz(sq, np.asarray(traj.times))))
    return err_final, err_qt


def run_convergence_study(family="heat", levels=4, mode="space", t_end=None,
                          base_n=8, fine_n=128, dts=(0.1, 0.05, 0.025)):
    """Manufactured-solution error study for a named problem family.

    mode='space' varies h with dt = h^2; mode='time' varies dt at fixed
    fine h (over a longer horizon, so the coarsest dt still takes several
    steps).  The 'linear' family is reproduced exactly by P1 elements and
    exercises the machine-precision path.
    """
    if t_end is None:
        t_end = 0.1 if mode == "space" else 0.5
    if family == "heat":
        make, exact = make_heat_problem, heat_exact
    elif family == "linear":
        make, exact = make_linear_problem, linear_exact
    else:
        raise ValueError(f"unknown problem family {family!r}")
    rows = []
    if mode == "space":
        for k in range(levels):
            n = base_n * 2**k
            h = 1.0 / n
            dt = h * h
            ef, eq = _solve_error(make(n, dt, t_end), exact)
            rows.append(ConvergenceRow(h, dt, ef, eq))
        return convergence_table(rows, varied="h")
    if mode == "time":
        for dt in dts:
            ef, eq = _solve_error(make(fine_n, dt, t_end), exact)
            rows.append(ConvergenceRow(1.0 / fine_n, dt, ef, eq))
        return convergence_table(rows, varied="dt")
    raise ValueError(f"unknown mode {mode!r}")


# -- delimited output --------------------------------------------------------


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    """Comma-separated, '.' decimals, header row, LF endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_trajectory_csv(path, traj, m):
    n = traj.fields[0].values.shape[0]
    header = ["t"] + [f"u{j + 1}_n{i}" for i in range(n) for j in range(m)]
    rows = [[f.t] + [float(v) for v in f.values.ravel()] for f in traj.fields]
    write_csv(path, header, rows)


def write_diagnostics_csv(path, report):
    header = ["t", "psi_energy", "h1_accum", "beta_pairing", "beta_pairing_raw"]
    write_csv(path, header, report.rows)


def write_summary(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
