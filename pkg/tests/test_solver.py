import math

import numpy as np
import pytest

from parvi import fem, solver
from parvi.diagnostics import heat_exact
from parvi.expr import ExprEvalError
from parvi.fem import Discretization
from parvi.problem import load_problem, parse_problem_text
from parvi.solver import (
    PenaltySchedule,
    SolverConfig,
    project_initial,
    solve_transient,
    step,
    sweep_eps,
    uniqueness_probe,
    l2qt_distance,
)
from parvi.validate import legendre_psi_batch


def test_schedule_defaults():
    sched = PenaltySchedule.geometric()
    assert sched.eps_list == pytest.approx((1e-2, 1e-3, 1e-4, 1e-5, 1e-6))
    assert sched.warm_start


def test_schedule_must_decrease():
    with pytest.raises(ValueError):
        PenaltySchedule((1e-3, 1e-2))
    with pytest.raises(ValueError):
        PenaltySchedule((1e-3, -1e-4))
    with pytest.raises(ValueError):
        PenaltySchedule(())


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0)
    cfg = SolverConfig.from_options({"dt": "0.05", "t_end": "0.2", "eps": "1e-4"})
    assert (cfg.dt, cfg.t_end, cfg.eps) == (0.05, 0.2, 1e-4)


def test_project_initial_interpolates(heat):
    _, disc, _ = heat
    loaded = parse_problem_text(
        load_problem("heat").text.replace("n = 32", "n = 4"))
    d4 = Discretization(loaded.spec, loaded.mesh)
    field, psi0, ub0 = project_initial(d4)
    s = math.sqrt(2.0) / 2.0
    assert np.allclose(field.values[:, 0], [0.0, s, 1.0, s, 0.0], atol=1e-15)
    assert psi0 > 0 and ub0 > 0


def test_project_initial_zero_field(obstacle):
    _, disc, _ = obstacle
    field, psi0, ub0 = project_initial(disc)
    assert np.all(field.values == 0.0)
    assert psi0 == 0.0 and ub0 == 0.0


def test_project_initial_singular_data():
    text = load_problem("heat").text.replace("u01 = sin(pi*x)", "u01 = 1/x")
    loaded = parse_problem_text(text)
    disc = Discretization(loaded.spec, loaded.mesh)
    with pytest.raises(ExprEvalError):
        project_initial(disc)


def test_steady_state_converges_immediately(heat):
    _, disc, config = heat
    zero = fem.StateField(np.zeros((disc.n_nodes, 1)), 0.0)
    field, stats = step(disc, zero, 0.005, 1e-6, config)
    assert np.all(field.values == 0.0)
    assert stats.iterations <= 1


def test_single_clipped_step():
    loaded = load_problem("heat")
    disc = Discretization(loaded.spec, loaded.mesh)
    config = SolverConfig(dt=1.0, t_end=0.25)
    traj = solve_transient(disc, 1e-6, config)
    assert len(traj.fields) == 2
    assert traj.times == [0.0, 0.25]


def test_trajectory_time_grid(obstacle):
    _, disc, config = obstacle
    traj = solve_transient(disc, 1e-2, config)
    times = np.asarray(traj.times)
    assert times[0] == 0.0
    assert times[-1] == config.t_end
    assert np.all(np.diff(times) > 0)


def test_heat_error_is_discretization_sized(heat):
    _, disc, config = heat
    traj = solve_transient(disc, 1e-6, config)
    err = disc.l2_error(traj.fields[-1].values, heat_exact, traj.times[-1])
    # n = 32, dt = 0.005: frozen from the run record; O(h^2 + dt) sized.
    assert err < 8e-3


def test_halving_dt_reduces_time_error():
    loaded = load_problem("heat")
    disc = Discretization(loaded.spec, loaded.mesh)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        traj = solve_transient(disc, 1e-6, SolverConfig(dt=dt, t_end=0.1))
        errs.append(disc.l2_error(traj.fields[-1].values, heat_exact, 0.1))
    orders = np.diff(np.log(errs)) / np.log(0.5)
    assert orders.min() >= 0.9


@pytest.mark.parametrize("name", ["heat", "nlheat"])
def test_energy_dissipates_without_sources(name):
    loaded = load_problem(name)
    disc = Discretization(loaded.spec, loaded.mesh)
    config = SolverConfig.from_options(loaded.solver_options)
    traj = solve_transient(disc, config.eps, config)
    energy = [float(disc.lumped @ legendre_psi_batch(disc.spec, f.values))
              for f in traj.fields]
    slack = 1e-10 * (1.0 + energy[0])
    assert all(b <= a + slack for a, b in zip(energy, energy[1:]))


def test_pairing_nonnegative_every_step(obstacle_sweep):
    for stage in obstacle_sweep:
        assert all(p >= 0.0 for p in stage.trajectory.pairings)


def test_first_obstacle_step_newton_count(obstacle):
    _, disc, config = obstacle
    u0, _, _ = project_initial(disc)
    field, stats = step(disc, u0, config.dt, 1e-2, config)
    assert stats.iterations <= 10  # run record: 3


def test_sweep_penalty_residual_decreases_tenfold(obstacle_sweep):
    residuals = [s.penalty_residual for s in obstacle_sweep]
    for a, b in zip(residuals, residuals[1:]):
        assert a / b == pytest.approx(10.0, rel=0.5)


def test_sweep_consecutive_distances_decrease(obstacle_sweep):
    dists = [s.consec_distance for s in obstacle_sweep[1:]]
    assert all(d is not None for d in dists)
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_sweep_unconstrained_stages_agree(heat):
    _, disc, config = heat
    sched = PenaltySchedule((1e-2, 1e-4, 1e-6))
    stages = sweep_eps(disc, sched, config)
    assert all(s.penalty_residual == 0.0 for s in stages)
    for a, b in zip(stages, stages[1:]):
        assert l2qt_distance(disc, a.trajectory, b.trajectory) <= 10 * config.newton_rtol


def test_warm_and_cold_sweeps_agree(obstacle):
    _, disc, config = obstacle
    sched_w = PenaltySchedule((1e-2, 1e-3, 1e-4), warm_start=True)
    sched_c = PenaltySchedule((1e-2, 1e-3, 1e-4), warm_start=False)
    warm = sweep_eps(disc, sched_w, config)
    cold = sweep_eps(disc, sched_c, config)
    d = l2qt_distance(disc, warm[-1].trajectory, cold[-1].trajectory)
    assert d <= 10 * config.newton_rtol


def test_step_deterministic(obstacle):
    _, disc, config = obstacle
    t1 = solve_transient(disc, 1e-3, config)
    t2 = solve_transient(disc, 1e-3, config)
    for f1, f2 in zip(t1.fields, t2.fields):
        assert np.array_equal(f1.values, f2.values)


def test_uniqueness_probe_linear(heat):
    _, disc, config = heat
    assert uniqueness_probe(disc, 1e-6, config, n_guesses=2, seed=1) <= 1e-12


def test_uniqueness_probe_single_guess(obstacle):
    _, disc, config = obstacle
    assert uniqueness_probe(disc, 1e-4, config, n_guesses=1, seed=1) == 0.0


def test_newton_failure_carries_history():
    # An unsatisfiable tolerance forces the damped iteration to give up.
    loaded = load_problem("nlheat")
    disc = Discretization(loaded.spec, loaded.mesh)
    config = SolverConfig(dt=0.005, t_end=0.1, newton_rtol=1e-30,
                          newton_atol=0.0, max_newton=4)
    u0, _, _ = project_initial(disc)
    with pytest.raises(solver.NewtonError) as exc:
        step(disc, u0, 0.005, 1e-6, config)
    assert len(exc.value.history) > 0
    assert exc.value.last is not None


def test_solve_abort_carries_partial_trajectory():
    loaded = load_problem("nlheat")
    disc = Discretization(loaded.spec, loaded.mesh)
    config = SolverConfig(dt=0.005, t_end=0.1, newton_rtol=1e-30,
                          newton_atol=0.0, max_newton=4)
    with pytest.raises(solver.SolveAbort) as exc:
        solve_transient(disc, 1e-6, config)
    assert len(exc.value.trajectory.fields) >= 1
