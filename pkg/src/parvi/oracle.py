"""Independent reference solver: primal-dual active set for the constrained
steps, used as ground truth for the penalty limit.

Constrained dofs guessed active are pinned to zero and the penalty-free
equations are solved; the set is then updated from the sign conditions
(state above zero activates, negative multiplier deactivates).  At a fixed
point the nodal complementarity conditions hold exactly: u <= 0, the
multiplier lambda >= 0 and u * lambda = 0.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import fem, solver

__all__ = [
    "ActiveSetError",
    "active_set_step",
    "active_set_transient",
    "oracle_compare",
]

MAX_DOFS = 500
MAX_SET_ITERATIONS = 50


class ActiveSetError(RuntimeError):
    pass


def _tight(config):
    # The reference solve certifies complementarity at the 1e-12 level,
    # so its Newton tolerance must sit well below that.
    return replace(config, newton_rtol=min(config.newton_rtol, 1e-12),
                   newton_atol=1e-13)


def active_set_step(disc, u_old, dt, config, active=None):
    """One constrained implicit Euler step.

    Returns ``(field, stats, active)`` where the multiplier -flux is read
    off the penalty-free residual at pinned dofs.
    """
    if disc.ndof > MAX_DOFS:
        raise ActiveSetError(
            f"reference solver limited to {MAX_DOFS} dofs, got {disc.ndof}")
    con = disc.constrained_dofs
    active = set() if active is None else set(int(d) for d in active)
    config = _tight(config)
    t_new = u_old.t + dt
    for _ in range(MAX_SET_ITERATIONS):
        pinned = np.array(sorted(active), dtype=np.int64)
        values, iters, norm, terms = solver._newton(
            disc, u_old.values, t_new, dt, None, config,
            guess=u_old.values, extra_pinned=pinned)
        flux = terms.nopenalty_residual
        flat = values.ravel()
        new_active = set(active)
        for d in con:
            d = int(d)
            if d in active:
                if -flux[d] < 0.0:  # multiplier negative: release
                    new_active.discard(d)
            elif flat[d] > 0.0:  # violation: pin
                new_active.add(d)
        if new_active == active:
            stats = solver.StepStats(
                t=t_new, dt=dt, iterations=iters, res_norm=norm,
                pairing=0.0, pairing_raw=0.0,
                gamma3_u=flat[con].copy(),
                gamma3_flux=flux[con].copy(),
            )
            return fem.StateField(values, t_new), stats, active
        active = new_active
    raise ActiveSetError(
        f"active set cycling: no fixed point in {MAX_SET_ITERATIONS} iterations")


def active_set_transient(disc, config):
    """Constrained transient solve on the same time grid as the penalty runs."""
    u0, psi0, ub0 = solver.project_initial(disc)
    traj = solver.Trajectory(fields=[u0], stats=[], pairings=[0.0],
                             pairings_raw=[0.0], initial_psi=psi0, initial_ub=ub0)
    active = set(int(d) for d in disc.constrained_dofs
                 if u0.values.ravel()[d] > 0.0)
    t_end = config.t_end
    u_old = u0
    while u_old.t < t_end - 1e-12 * max(1.0, t_end):
        dt_n = min(config.dt, t_end - u_old.t)
        field, stats, active = active_set_step(disc, u_old, dt_n, config, active)
        if abs(field.t - t_end) < 1e-12 * max(1.0, t_end):
            field = fem.StateField(field.values, t_end)
            stats.t = t_end
        traj.fields.append(field)
        traj.stats.append(stats)
        traj.pairings.append(0.0)
        traj.pairings_raw.append(0.0)
        u_old = field
    return traj


def oracle_compare(disc, schedule, config):
    """Per-stage L2(Q_T) distance between penalty and active-set solutions.

    Returns (stages, reference trajectory, rows) with one (eps, distance)
    row per continuation stage.
    """
    reference = active_set_transient(disc, config)
    stages = solver.sweep_eps(disc, schedule, config)
    rows = []
    for stage in stages:
        if stage.failure is not None:
            rows.append((stage.eps, float("nan")))
            continue
        rows.append((stage.eps, solver.l2qt_distance(disc, stage.trajectory, reference)))
    return stages, reference, rows
