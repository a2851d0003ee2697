"""Transient solves of the penalized problem: implicit Euler in time,
damped Newton per step, geometric continuation in the penalty parameter.

Each continuation stage can warm-start from the previous stage's
trajectory.  Newton uses Armijo backtracking on the residual norm, which
keeps the iteration from stalling at the kink of the boundary penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from . import diagnostics as diag
from . import fem
from .fem import StateField

__all__ = [
    "SolverConfig",
    "PenaltySchedule",
    "StepStats",
    "Trajectory",
    "SweepStage",
    "NewtonError",
    "SolveAbort",
    "project_initial",
    "step",
    "solve_transient",
    "sweep_eps",
    "uniqueness_probe",
    "l2qt_distance",
]


class NewtonError(RuntimeError):
    """Newton failed; carries the residual history and last iterate."""

    def __init__(self, message, history=(), last=None):
        super().__init__(message)
        self.history = list(history)
        self.last = last


class SolveAbort(RuntimeError):
    """Transient solve aborted; carries the partial trajectory."""

    def __init__(self, message, trajectory, cause=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    t_end: float = 0.5
    eps: float = 1e-6
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-14
    max_newton: int = 25
    max_halvings: int = 8
    retry_floor: float = 100.0  # a retried step may not shrink dt below dt/retry_floor

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            # A single clipped step is still allowed when t_end < dt.
            if self.t_end <= 0:
                raise ValueError("t_end must be positive")

    @classmethod
    def from_options(cls, options, **overrides):
        """Build from a problem file's [solver] section plus overrides."""
        kwargs = {}
        mapping = {
            "dt": ("dt", float),
            "t_end": ("t_end", float),
            "eps": ("eps", float),
            "newton_tol": ("newton_rtol", float),
            "max_iter": ("max_newton", int),
        }
        for key, (attr, conv) in mapping.items():
            if key in options:
                kwargs[attr] = conv(options[key])
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


@dataclass(frozen=True)
class PenaltySchedule:
    """Strictly decreasing penalty parameters for the continuation sweep."""

    eps_list: tuple
    warm_start: bool = True

    def __post_init__(self):
        if not self.eps_list:
            raise ValueError("schedule must contain at least one stage")
        if any(e <= 0 for e in self.eps_list):
            raise ValueError("penalty parameters must be positive")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("penalty parameters must be strictly decreasing")

    @classmethod
    def geometric(cls, eps0=1e-2, stages=5, factor=10.0, warm_start=True):
        return cls(tuple(eps0 / factor**k for k in range(stages)), warm_start)


@dataclass
class StepStats:
    t: float
    dt: float
    iterations: int
    res_norm: float
    pairing: float  # <beta(u), u> / eps, the penalty term's action
    pairing_raw: float  # unscaled <beta(u), u>
    gamma3_u: np.ndarray
    gamma3_flux: np.ndarray  # penalty-free residual at constrained dofs


@dataclass
class Trajectory:
    """States at strictly increasing time levels starting from t = 0."""

    fields: list
    stats: list
    pairings: list  # scaled pairing per time level, aligned with fields
    pairings_raw: list
    initial_psi: float = 0.0
    initial_ub: float = 0.0

    @property
    def times(self):
        return [f.t for f in self.fields]


def project_initial(disc):
    """Interpolate the initial data and report its energy integrals.

    Returns ``(field, psi_integral, uB_integral)`` where both integrals use
    the lumped nodal quadrature; non-finite values raise.
    """
    from .validate import legendre_psi_batch

    values = disc.interpolate_initial()
    psi = legendre_psi_batch(disc.spec, values)
    psi_int = float(np.dot(disc.lumped, psi))
    ub = np.einsum("ij,ij->i", values, disc.nodal_b(values))
    ub_int = float(np.dot(disc.lumped, ub))
    if not (np.isfinite(psi_int) and np.isfinite(ub_int)):
        raise fem.AssemblyError("initial energy integral is non-finite")
    return StateField(values, 0.0), psi_int, ub_int


def _newton(disc, u_old_values, t_new, dt, eps, config, guess, extra_pinned=None):
    """Damped Newton on one step's residual; returns (values, iters, norm, terms).

    ``extra_pinned`` dofs are held at zero in addition to the Dirichlet
    rows (used by the active-set reference solver).
    """
    free = disc.free_dofs
    if extra_pinned is not None and len(extra_pinned):
        keep = ~np.isin(free, extra_pinned)
        sub = np.flatnonzero(keep)
    else:
        sub = slice(None)
    free_ids = free[sub] if not isinstance(sub, slice) else free

    u = disc.apply_dirichlet(guess if guess is not None else u_old_values)
    flat = u.ravel()
    if extra_pinned is not None and len(extra_pinned):
        flat[extra_pinned] = 0.0
    u = flat.reshape(-1, disc.m)

    history = []
    target = None
    stalls = 0
    for it in range(config.max_newton + 1):
        terms = fem.assemble_system(disc, u, u_old_values, dt, eps, t_new)
        r = terms.residual[sub]
        norm = float(np.max(np.abs(r))) if len(r) else 0.0
        history.append(norm)
        if target is None:
            target = max(config.newton_rtol * norm, config.newton_atol)
        if norm <= target:
            return u, it, norm, terms
        if it == config.max_newton:
            raise NewtonError(
                f"no convergence in {config.max_newton} Newton iterations "
                f"(residual {norm:.3e}, target {target:.3e})",
                history, u)
        J = terms.jacobian[sub, :][:, sub] if not isinstance(sub, slice) else terms.jacobian
        try:
            delta = spla.spsolve(J.tocsc(), -r)
        except RuntimeError as exc:
            raise NewtonError(f"linear solve failed: {exc}", history, u) from exc
        if not np.all(np.isfinite(delta)):
            raise NewtonError("linear solve produced non-finite update", history, u)

        alpha = 1.0
        best = None
        accepted = None
        for _ in range(config.max_halvings + 1):
            trial_flat = u.ravel().copy()
            trial_flat[free_ids] += alpha * delta
            trial = trial_flat.reshape(-1, disc.m)
            r_trial = fem.assemble_residual(disc, trial, u_old_values, dt, eps, t_new)
            trial_norm = float(np.max(np.abs(r_trial.residual[sub])))
            if trial_norm <= (1.0 - 1e-4 * alpha) * norm:
                accepted = trial
                break
            if best is None or trial_norm < best[0]:
                best = (trial_norm, trial)
            alpha *= 0.5
        if accepted is None:
            if best is not None and best[0] < norm:
                accepted = best[1]
                stalls = 0
            else:
                stalls += 1
                accepted = best[1] if best is not None else u
                if stalls >= 2:
                    raise NewtonError(
                        f"backtracking stalled at residual {norm:.3e}", history, u)
        u = accepted
    raise AssertionError("unreachable")


def step(disc, u_old, dt, eps, config, guess=None):
    """Advance one implicit Euler step; returns (StateField, StepStats)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_new = u_old.t + dt
    values, iters, norm, terms = _newton(
        disc, u_old.values, t_new, dt, eps, config,
        guess if guess is not None else u_old.values)
    con = disc.constrained_dofs
    stats = StepStats(
        t=t_new,
        dt=dt,
        iterations=iters,
        res_norm=norm,
        pairing=terms.beta_pairing / eps,
        pairing_raw=terms.beta_pairing,
        gamma3_u=values.ravel()[con].copy(),
        gamma3_flux=terms.nopenalty_residual[con].copy(),
    )
    return StateField(values, t_new), stats


def state_at(trajectory, t):
    """State values at time t, linearly interpolated between levels."""
    times = trajectory.times
    if t <= times[0]:
        return trajectory.fields[0].values
    if t >= times[-1]:
        return trajectory.fields[-1].values
    hi = int(np.searchsorted(times, t))
    lo = hi - 1
    if abs(times[hi] - t) < 1e-12 * (1.0 + abs(t)):
        return trajectory.fields[hi].values
    if abs(times[lo] - t) < 1e-12 * (1.0 + abs(t)):
        return trajectory.fields[lo].values
    w = (t - times[lo]) / (times[hi] - times[lo])
    return (1.0 - w) * trajectory.fields[lo].values + w * trajectory.fields[hi].values


def solve_transient(disc, eps, config, guess_traj=None, rng=None):
    """Step from 0 to t_end; a failed step is retried once with dt/2.

    ``guess_traj`` warm-starts each Newton solve from another trajectory;
    ``rng`` adds the randomized-initial-iterate perturbation used by the
    uniqueness probe.
    """
    u0, psi0, ub0 = project_initial(disc)
    _, raw0 = fem.penalty_form(disc, u0.values)
    traj = Trajectory(
        fields=[u0], stats=[], pairings=[raw0 / eps], pairings_raw=[raw0],
        initial_psi=psi0, initial_ub=ub0)
    t_end = config.t_end
    u_old = u0
    while u_old.t < t_end - 1e-12 * max(1.0, t_end):
        dt_n = min(config.dt, t_end - u_old.t)
        guess = None
        if guess_traj is not None:
            guess = state_at(guess_traj, u_old.t + dt_n)
        if rng is not None:
            base = guess if guess is not None else u_old.values
            amp = 0.1 * float(np.max(np.abs(u_old.values))) + 0.01
            noisy = base.ravel().copy()
            noisy[disc.free_dofs] += amp * rng.uniform(-1.0, 1.0, len(disc.free_dofs))
            guess = noisy.reshape(-1, disc.m)
        try:
            field, stats = step(disc, u_old, dt_n, eps, config, guess)
        except NewtonError as err:
            dt_half = dt_n / 2.0
            if dt_half < config.dt / config.retry_floor:
                raise SolveAbort(
                    f"step at t = {u_old.t:.6g} failed and dt is at its floor",
                    traj, err) from err
            try:
                field, stats = step(disc, u_old, dt_half, eps, config, guess=None)
            except NewtonError as err2:
                raise SolveAbort(
                    f"step at t = {u_old.t:.6g} failed twice (dt and dt/2)",
                    traj, err2) from err2
        if abs(field.t - t_end) < 1e-12 * max(1.0, t_end):
            field = StateField(field.values, t_end)
        traj.fields.append(field)
        traj.stats.append(stats)
        traj.pairings.append(stats.pairing)
        traj.pairings_raw.append(stats.pairing_raw)
        u_old = field
    return traj


@dataclass
class SweepStage:
    eps: float
    trajectory: object
    report: object
    penalty_residual: float
    consec_distance: float | None
    failure: str | None = None


def sweep_eps(disc, schedule, config):
    """Continuation over the schedule, warm-starting successive stages.

    Emits the per-stage penalty residual and the L2(Q_T) distance between
    consecutive stage solutions; failed stages are recorded and the sweep
    continues cold.
    """
    stages = []
    prev_traj = None
    for eps in schedule.eps_list:
        guess = prev_traj if schedule.warm_start else None
        try:
            traj = solve_transient(disc, eps, replace(config, eps=eps), guess_traj=guess)
        except SolveAbort as err:
            stages.append(SweepStage(eps, err.trajectory, None, float("nan"),
                                     None, failure=str(err)))
            prev_traj = None
            continue
        report = diag.build_report(disc, traj)
        dist = l2qt_distance(disc, prev_traj, traj) if prev_traj is not None else None
        stages.append(SweepStage(eps, traj, report, report.penalty_residual, dist))
        prev_traj = traj
    return stages


def uniqueness_probe(disc, eps, config, n_guesses=5, seed=0):
    """Max pairwise L2(Q_T) distance over randomized-initial-iterate solves."""
    trajs = []
    for k in range(n_guesses):
        rng = np.random.default_rng((seed, k))
        trajs.append(solve_transient(disc, eps, config, rng=rng))
    worst = 0.0
    for a in range(len(trajs)):
        for b in range(a + 1, len(trajs)):
            worst = max(worst, l2qt_distance(disc, trajs[a], trajs[b]))
    return worst


def l2qt_distance(disc, traj_a, traj_b):
    """Space-time L2 distance, trapezoidal in time, lumped nodal in space."""
    times = traj_a.times
    sq = np.empty(len(times))
    for k, t in enumerate(times):
        diff = traj_a.fields[k].values - state_at(traj_b, t)
        sq[k] = disc.lumped_l2(diff) ** 2
    return float(np.sqrt(np.trapezoid(sq, times)))
