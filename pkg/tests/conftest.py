import pytest

from parvi import fem, problem, solver


@pytest.fixture(scope="session")
def obstacle():
    loaded = problem.load_problem("obstacle1d")
    disc = fem.Discretization(loaded.spec, loaded.mesh)
    config = solver.SolverConfig.from_options(loaded.solver_options)
    return loaded, disc, config


@pytest.fixture(scope="session")
def obstacle_sweep(obstacle):
    _, disc, config = obstacle
    schedule = solver.PenaltySchedule.geometric()
    return solver.sweep_eps(disc, schedule, config)


@pytest.fixture(scope="session")
def heat():
    loaded = problem.load_problem("heat")
    disc = fem.Discretization(loaded.spec, loaded.mesh)
    config = solver.SolverConfig.from_options(loaded.solver_options)
    return loaded, disc, config
