"""Solvers and checks for doubly nonlinear parabolic systems with mixed
Dirichlet/Neumann/unilateral boundary conditions.

The unilateral constraint (state <= 0 with a sign condition on the
boundary flux and pointwise complementarity) is enforced through a
boundary penalty with continuation in the penalty parameter; an
independent active-set solver provides the reference limit, and the
diagnostics track the quantities the underlying a-priori estimates bound.
"""

__version__ = "0.1.0"

from .expr import parse_expr, eval_expr, pretty  # noqa: F401
from .fem import Discretization, StateField, penalty_form  # noqa: F401
from .mesh import (  # noqa: F401
    BoundaryTag,
    Mesh,
    boundary_measure,
    unit_interval_mesh,
    unit_square_mesh,
)
from .problem import ProblemSpec, load_problem, parse_problem_text  # noqa: F401
from .solver import (  # noqa: F401
    PenaltySchedule,
    SolverConfig,
    Trajectory,
    solve_transient,
    sweep_eps,
    uniqueness_probe,
)
from .validate import check_A4, legendre_psi  # noqa: F401
