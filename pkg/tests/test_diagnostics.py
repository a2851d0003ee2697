import math

import numpy as np
import pytest

from parvi import diagnostics as diag
from parvi import solver
from parvi.fem import Discretization, StateField
from parvi.problem import load_problem, parse_problem_text


def _manual_trajectory(states, times):
    fields = [StateField(v, t) for v, t in zip(states, times)]
    return solver.Trajectory(fields=fields, stats=[], pairings=[0.0] * len(fields),
                             pairings_raw=[0.0] * len(fields))


def test_energy_zero_trajectory(heat):
    _, disc, _ = heat
    zeros = [np.zeros((disc.n_nodes, 1)) for _ in range(3)]
    traj = _manual_trajectory(zeros, [0.0, 0.1, 0.2])
    rows = diag.energy_trajectory(traj, disc)
    assert all(psi == 0.0 and h1 == 0.0 for _, psi, h1 in rows)


def test_energy_constant_field(heat):
    # B = u on the unit interval: the energy density of a constant c is
    # c^2/2, and the lumped weights partition the interval.
    _, disc, _ = heat
    c = 0.75
    traj = _manual_trajectory([np.full((disc.n_nodes, 1), c)], [0.0])
    rows = diag.energy_trajectory(traj, disc)
    assert rows[0][1] == pytest.approx(c * c / 2.0, abs=1e-13)


def test_heat_energy_decay_rate():
    loaded = parse_problem_text(load_problem("heat").text.replace("n = 32", "n = 64")
                                .replace("dt = 0.005", "dt = 0.001"))
    disc = Discretization(loaded.spec, loaded.mesh)
    config = solver.SolverConfig.from_options(loaded.solver_options)
    traj = solver.solve_transient(disc, 1e-6, config)
    rows = diag.energy_trajectory(traj, disc)
    e0 = rows[0][1]
    for t, psi, _ in rows:
        assert psi / e0 == pytest.approx(math.exp(-2 * math.pi**2 * t), rel=0.05)


def test_h1_accumulation_is_monotone(obstacle_sweep):
    traj = obstacle_sweep[-1].trajectory
    _, disc, _ = (None, None, None)
    loaded = load_problem("obstacle1d")
    disc = Discretization(loaded.spec, loaded.mesh)
    rows = diag.energy_trajectory(traj, disc)
    h1 = [r[2] for r in rows]
    assert all(b >= a for a, b in zip(h1, h1[1:]))


def test_penalty_residual_zero_iff_pairings_zero():
    traj = _manual_trajectory([np.zeros((3, 1))] * 3, [0.0, 0.5, 1.0])
    assert diag.penalty_residual(traj) == 0.0
    traj.pairings = [0.0, 1e-9, 0.0]
    assert diag.penalty_residual(traj) > 0.0


def test_penalty_residual_ratio_window(obstacle_sweep):
    # Consecutive stages differ by one decade of eps; the recorded
    # residual follows within a wide scaling window.
    res = [s.penalty_residual for s in obstacle_sweep]
    for a, b in zip(res, res[1:]):
        assert 2.0 <= a / b <= 50.0


def test_penalty_residual_over_eps_bounded(obstacle_sweep):
    ratios = [s.penalty_residual / s.eps for s in obstacle_sweep]
    assert max(ratios) / min(ratios) <= 10.0


def test_complementarity_cauchy_schwarz(obstacle_sweep):
    loaded = load_problem("obstacle1d")
    disc = Discretization(loaded.spec, loaded.mesh)
    for stage in obstacle_sweep:
        for st in stage.trajectory.stats:
            max_u = float(np.max(np.abs(st.gamma3_u)))
            max_f = float(np.max(np.abs(st.gamma3_flux)))
            trip = diag.complementarity_report(disc, stage.trajectory.fields[-1].values,
                                               st.gamma3_flux)
            assert trip[2] <= max_u * max_f + 1e-15 or trip[2] <= trip[0] * max_f + 1e-15


def test_complementarity_no_constraint(heat):
    _, disc, _ = heat
    trip = diag.complementarity_report(disc, np.ones((disc.n_nodes, 1)), np.array([]))
    assert trip == (0.0, 0.0, 0.0)


def test_gronwall_fit_nonnegative_slack(heat):
    _, disc, config = heat
    traj = solver.solve_transient(disc, 1e-6, config)
    rows = diag.energy_trajectory(traj, disc)
    A, C, slack = diag.gronwall_fit([r[0] for r in rows], [r[1] for r in rows])
    assert slack >= -1e-12 * (1 + A)
    assert C == 0.0  # dissipative run: no growth needed


def test_convergence_orders_invariant_under_reordering():
    rows = [diag.ConvergenceRow(h, h * h, h**2 * 3.0, h**2 * 2.0)
            for h in (1 / 8, 1 / 16, 1 / 32, 1 / 64)]
    t1 = diag.convergence_table(rows, varied="h")
    t2 = diag.convergence_table(list(reversed(rows)), varied="h")
    assert t1.order_final == pytest.approx(2.0, abs=1e-12)
    assert t1.order_final == t2.order_final
    assert t1.order_qt == t2.order_qt


def test_convergence_needs_three_resolutions():
    rows = [diag.ConvergenceRow(0.1, 0.01, 1e-2, 1e-2),
            diag.ConvergenceRow(0.05, 0.0025, 2.5e-3, 2.5e-3)]
    table = diag.convergence_table(rows)
    assert table.order_final is None and not table.exact


def test_convergence_exact_flag():
    table = diag.run_convergence_study("linear", levels=3)
    assert table.exact
    assert all(r.err_final < 1e-12 for r in table.rows)


def test_csv_writer_deterministic(tmp_path):
    rows = [(0.1, 1.0 / 3.0, float("nan")), (0.2, 2.0 / 3.0, 5.0)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    diag.write_csv(p1, ["t", "v", "w"], rows)
    diag.write_csv(p2, ["t", "v", "w"], rows)
    b1, b2 = p1.read_bytes(), p2.read_bytes()
    assert b1 == b2
    assert b"\r" not in b1
    assert b1.decode().splitlines()[0] == "t,v,w"
    # Shortest round-trip float formatting survives a parse.
    assert float(b1.decode().splitlines()[1].split(",")[1]) == 1.0 / 3.0


def test_build_report_fields(obstacle_sweep):
    report = obstacle_sweep[-1].report
    assert report.penalty_residual > 0
    assert len(report.rows) == len(obstacle_sweep[-1].trajectory.fields)
    assert report.complementarity[0] <= 1e-4
    assert all(len(r) == 5 for r in report.rows)
