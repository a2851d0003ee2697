"""P1 finite elements: quadrature, weak-form assembly, penalty operator.

The discrete residual of one implicit Euler step tested on basis phi_a is

    sum_i w_i (B(u)_i - B(uold)_i)/dt phi_a(i)          (lumped storage)
    + int (K(u) grad u + e(u)) . grad phi_a             (flux)
    - int F(x,t,u) phi_a - int_G2 g(x,t,u) phi_a        (sources)
    + (1/eps) int_G3 max(u,0) phi_a                     (boundary penalty)

Nonlinear integrands use 3-point Gauss per element/facet (midpoint rule on
triangles); the storage term is lumped so the nodal energy argument of the
transient solver holds exactly.  Dirichlet rows are eliminated: the reduced
residual/Jacobian range over non-Dirichlet dofs only, with Dirichlet values
imposed on the state before assembly.

Assembly is a pure function of its inputs; per-element contributions are
accumulated in element order, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import expr as ex
from .mesh import BoundaryTag

__all__ = [
    "StateField",
    "WeakFormTerms",
    "AssemblyError",
    "Discretization",
    "penalty_form",
    "assemble_residual",
    "assemble_jacobian",
    "jacobian_fd_error",
    "vi_residual",
    "feasible_test_bank",
]

# 3-point Gauss on [0,1] (degree 5).
_G3_X = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_G3_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

# Edge-midpoint rule on the reference triangle (degree 2), barycentric.
_TRI_Q = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_TRI_W = np.array([1.0, 1.0, 1.0]) / 3.0


class AssemblyError(RuntimeError):
    """Coefficient evaluation failed at a quadrature point."""


@dataclass
class StateField:
    """Nodal values of the m-component state at one time level."""

    values: np.ndarray  # (n_nodes, m)
    t: float

    def copy(self):
        return StateField(self.values.copy(), self.t)


@dataclass
class WeakFormTerms:
    """Assembled residual with per-term contributions kept separable.

    ``residual`` and ``jacobian`` are reduced to non-Dirichlet dofs; the
    term vectors (parabolic, stiffness, convection, load, boundary,
    penalty) are full-length for diagnostics, with penalty already scaled
    by 1/eps.  ``beta_vector``/``beta_pairing`` are the unscaled penalty
    form and its pairing with the state.
    """

    residual: np.ndarray
    jacobian: sp.csr_matrix | None
    free_dofs: np.ndarray
    parabolic: np.ndarray
    stiffness: np.ndarray
    convection: np.ndarray
    load: np.ndarray
    boundary: np.ndarray
    penalty: np.ndarray
    beta_vector: np.ndarray
    beta_pairing: float

    @property
    def full_residual(self):
        return (self.parabolic + self.stiffness + self.convection
                + self.penalty - self.load - self.boundary)

    @property
    def nopenalty_residual(self):
        return (self.parabolic + self.stiffness + self.convection
                - self.load - self.boundary)


class Discretization:
    """Compiled coefficients plus mesh-derived assembly data for one problem."""

    def __init__(self, spec, mesh, fd_rel=1e-6):
        if spec.dim != mesh.dim:
            raise ValueError(f"problem is {spec.dim}D but mesh is {mesh.dim}D")
        self.spec = spec
        self.mesh = mesh
        self.m = spec.m
        self.n_nodes = mesh.n_nodes
        self.ndof = self.m * self.n_nodes
        self.fd_rel = fd_rel
        self._unames = spec.uvar_names()
        self._B = [ex.compile_expr(b) for b in spec.B]
        self._K = [[ex.compile_expr(spec.K[j][i]) for i in range(self.m)]
                   for j in range(self.m)]
        self._e = [[ex.compile_expr(spec.e[j][k]) for k in range(spec.dim)]
                   for j in range(self.m)]
        self._F = [ex.compile_expr(f) for f in spec.F]
        self._g = [ex.compile_expr(g) for g in spec.g] if spec.g is not None else None
        self._setup_geometry()
        self._setup_boundary()

    # -- geometry ---------------------------------------------------------

    def _setup_geometry(self):
        mesh = self.mesh
        self.volumes = mesh.element_volumes()
        elems = mesh.elements
        if mesh.dim == 1:
            nloc = 2
            h = self.volumes
            self.shape = np.array([1.0 - _G3_X, _G3_X])  # (nloc, q)
            self.qweights = _G3_W
            self.grads = np.empty((len(elems), 2, 1))
            self.grads[:, 0, 0] = -1.0 / h
            self.grads[:, 1, 0] = 1.0 / h
        else:
            nloc = 3
            p = mesh.nodes[elems]  # (E, 3, 2)
            twoA = 2.0 * self.volumes
            self.grads = np.empty((len(elems), 3, 2))
            self.grads[:, 0, 0] = (p[:, 1, 1] - p[:, 2, 1]) / twoA
            self.grads[:, 1, 0] = (p[:, 2, 1] - p[:, 0, 1]) / twoA
            self.grads[:, 2, 0] = (p[:, 0, 1] - p[:, 1, 1]) / twoA
            self.grads[:, 0, 1] = (p[:, 2, 0] - p[:, 1, 0]) / twoA
            self.grads[:, 1, 1] = (p[:, 0, 0] - p[:, 2, 0]) / twoA
            self.grads[:, 2, 1] = (p[:, 1, 0] - p[:, 0, 0]) / twoA
            self.shape = _TRI_Q.T.copy()  # (nloc, q): barycentric value of node a at qp
            self.qweights = _TRI_W
        self.nloc = nloc
        # Physical quadrature points (E, q, dim).
        self.qpoints = np.einsum("aq,ead->eqd", self.shape, mesh.nodes[elems])
        # Lumped weights: |element| / (dim + 1) per vertex.
        w = np.zeros(self.n_nodes)
        np.add.at(w, elems.ravel(),
                  np.repeat(self.volumes / (mesh.dim + 1), nloc))
        self.lumped = w
        self.elem_dofs = (elems[:, :, None] * self.m
                          + np.arange(self.m)[None, None, :])  # (E, nloc, m)

    def _facet_block(self, tag):
        mesh = self.mesh
        fnodes = mesh.facets_with_tag(tag)
        if len(fnodes) == 0:
            return None
        if mesh.dim == 1:
            measures = np.ones(len(fnodes))
            shape = np.array([[1.0]])
            qw = np.array([1.0])
            qpx = mesh.nodes[fnodes[:, 0]][:, None, :]
        else:
            p0 = mesh.nodes[fnodes[:, 0]]
            p1 = mesh.nodes[fnodes[:, 1]]
            measures = np.linalg.norm(p1 - p0, axis=1)
            shape = np.array([1.0 - _G3_X, _G3_X])
            qw = _G3_W
            qpx = (p0[:, None, :] * (1.0 - _G3_X)[None, :, None]
                   + p1[:, None, :] * _G3_X[None, :, None])
        dofs = fnodes[:, :, None] * self.m + np.arange(self.m)[None, None, :]
        return {"nodes": fnodes, "measures": measures, "shape": shape,
                "qw": qw, "qpx": qpx, "dofs": dofs}

    def _setup_boundary(self):
        spec, mesh = self.spec, self.mesh
        self.neumann = self._facet_block(BoundaryTag.NEUMANN)
        self.unilateral = self._facet_block(BoundaryTag.UNILATERAL)
        self.dirichlet_nodes = mesh.nodes_with_tag(BoundaryTag.DIRICHLET)
        if spec.dirichlet is not None:
            self.dirichlet_values = self._eval_spatial(
                spec.dirichlet, mesh.nodes[self.dirichlet_nodes], "dirichlet")
        else:
            self.dirichlet_values = np.zeros((len(self.dirichlet_nodes), self.m))
        dir_dofs = (self.dirichlet_nodes[:, None] * self.m
                    + np.arange(self.m)[None, :]).ravel()
        free = np.ones(self.ndof, dtype=bool)
        free[dir_dofs] = False
        self.dirichlet_dofs = dir_dofs
        self.free_dofs = np.flatnonzero(free)
        # Constrained dofs: unilateral nodes x masked components, Dirichlet wins.
        con = []
        if self.unilateral is not None:
            g3_nodes = np.setdiff1d(mesh.nodes_with_tag(BoundaryTag.UNILATERAL),
                                    self.dirichlet_nodes)
            for j in range(self.m):
                if spec.constraint_mask[j]:
                    con.extend(int(node) * self.m + j for node in g3_nodes)
        self.constrained_dofs = np.array(sorted(con), dtype=np.int64)

    # -- evaluation helpers -------------------------------------------------

    def _eval_spatial(self, exprs, pts, what):
        env = {"x": pts[:, 0]}
        env["y"] = pts[:, 1] if self.mesh.dim == 2 else 0.0
        out = np.empty((len(pts), self.m))
        for j, node in enumerate(exprs):
            vals = np.broadcast_to(ex.compile_expr(node)(env), len(pts)).astype(float)
            if not np.all(np.isfinite(vals)):
                bad = int(np.argmax(~np.isfinite(vals)))
                raise ex.ExprEvalError(
                    f"{what}{j + 1} is non-finite at x = {pts[bad].tolist()}")
            out[:, j] = vals
        return out

    def interpolate_initial(self):
        """Nodal interpolation of u0 with Dirichlet data imposed."""
        vals = self._eval_spatial(self.spec.u0, self.mesh.nodes, "u0")
        return self.apply_dirichlet(vals)

    def apply_dirichlet(self, values):
        out = np.array(values, dtype=float, copy=True)
        out[self.dirichlet_nodes] = self.dirichlet_values
        return out

    def _env(self, U, X=None, t=0.0):
        env = {self._unames[j]: U[..., j] for j in range(self.m)}
        if X is not None:
            env["x"] = X[..., 0]
            env["y"] = X[..., 1] if self.mesh.dim == 2 else 0.0
        env["t"] = t
        return env

    def _coef(self, fn, env, shape, what, where):
        vals = np.broadcast_to(fn(env), shape).astype(float)
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise AssemblyError(
                f"coefficient {what} is non-finite at {where} index {tuple(bad)}")
        return vals

    def nodal_b(self, values):
        """B at nodal states, (n_nodes, m)."""
        env = self._env(values)
        return np.column_stack(
            [self._coef(self._B[j], env, (self.n_nodes,), f"B{j + 1}", "node")
             for j in range(self.m)])

    def nodal_b_jacobian(self, values):
        """Central-difference Jacobian of B at each node, (n_nodes, m, m)."""
        out = np.empty((self.n_nodes, self.m, self.m))
        for l in range(self.m):
            h = self.fd_rel * (1.0 + np.abs(values[:, l]))
            up, um = values.copy(), values.copy()
            up[:, l] += h
            um[:, l] -= h
            out[:, :, l] = (self.nodal_b(up) - self.nodal_b(um)) / (2.0 * h)[:, None]
        return out

    # -- norms ---------------------------------------------------------------

    def lumped_l2(self, values):
        return float(np.sqrt(np.sum(self.lumped[:, None] * values**2)))

    def h1_norm_sq(self, values):
        Uel = values[self.mesh.elements]
        gradu = np.einsum("ead,eam->emd", self.grads, Uel)
        semi = float(np.sum(self.volumes * np.sum(gradu**2, axis=(1, 2))))
        return semi + self.lumped_l2(values) ** 2

    def l2_error(self, values, exact, t):
        """L2(Omega) distance between the P1 field and ``exact(pts, t)``."""
        Uq = np.einsum("aq,eam->eqm", self.shape, values[self.mesh.elements])
        pts = self.qpoints.reshape(-1, self.mesh.dim)
        Eq = np.asarray(exact(pts, t), dtype=float).reshape(Uq.shape)
        err2 = np.sum((Uq - Eq) ** 2, axis=2)
        return float(np.sqrt(np.sum(self.volumes[:, None] * self.qweights[None, :] * err2)))


def penalty_form(disc, values):
    """Discrete boundary penalty: vector b_i = int_G3 max(u,0) phi_i and
    the pairing <beta(u), u> (unscaled)."""
    b = np.zeros(disc.ndof)
    pairing = 0.0
    block = disc.unilateral
    if block is None:
        return b, pairing
    Uq = np.einsum("aq,fam->fqm", block["shape"], values[block["nodes"]])
    for j in range(disc.m):
        if not disc.spec.constraint_mask[j]:
            continue
        up = np.maximum(Uq[:, :, j], 0.0)
        wq = block["measures"][:, None] * block["qw"][None, :]
        pairing += float(np.sum(wq * up * Uq[:, :, j]))
        contrib = np.einsum("fq,aq->fa", wq * up, block["shape"])
        np.add.at(b, block["dofs"][:, :, j], contrib)
    return b, pairing


def _penalty_jacobian_blocks(disc, values):
    """COO data of d/du of the unscaled penalty vector (semismooth, 0 at the kink)."""
    block = disc.unilateral
    rows, cols, data = [], [], []
    if block is None:
        return rows, cols, data
    Uq = np.einsum("aq,fam->fqm", block["shape"], values[block["nodes"]])
    nfac, nper = block["nodes"].shape
    for j in range(disc.m):
        if not disc.spec.constraint_mask[j]:
            continue
        active = (Uq[:, :, j] > 0.0).astype(float)
        wq = block["measures"][:, None] * block["qw"][None, :] * active
        blocks = np.einsum("fq,aq,bq->fab", wq, block["shape"], block["shape"])
        dj = block["dofs"][:, :, j]
        rows.append(np.repeat(dj, nper, axis=1).ravel())
        cols.append(np.tile(dj, (1, nper)).ravel())
        data.append(blocks.ravel())
    return rows, cols, data


def _assemble(disc, u_new, u_old, dt, eps, t, want_jacobian):
    spec = disc.spec
    m, nloc = disc.m, disc.nloc
    E = disc.mesh.n_elements
    q = len(disc.qweights)

    parabolic = np.zeros(disc.ndof)
    stiffness = np.zeros(disc.ndof)
    convection = np.zeros(disc.ndof)
    load = np.zeros(disc.ndof)
    boundary = np.zeros(disc.ndof)

    # Storage term, lumped: w_i (B(u) - B(uold)) / dt at each node.
    db = (disc.nodal_b(u_new) - disc.nodal_b(u_old)) / dt
    parabolic[:] = (disc.lumped[:, None] * db).ravel()

    # Element quadrature data.
    Uel = u_new[disc.mesh.elements]  # (E, nloc, m)
    gradu = np.einsum("ead,eam->emd", disc.grads, Uel)  # (E, m, dim)
    Uq = np.einsum("aq,eam->eqm", disc.shape, Uel)  # (E, q, m)
    env_q = disc._env(Uq, disc.qpoints, t)
    wq = disc.volumes[:, None] * disc.qweights[None, :]  # (E, q)

    Kq = np.empty((E, q, m, m))
    for j in range(m):
        for i in range(m):
            Kq[:, :, j, i] = disc._coef(disc._K[j][i], env_q, (E, q),
                                        f"K{j + 1}{i + 1}", "element")
    eq = np.empty((E, q, m, disc.mesh.dim))
    for j in range(m):
        for k in range(disc.mesh.dim):
            eq[:, :, j, k] = disc._coef(disc._e[j][k], env_q, (E, q),
                                        f"e{j + 1}{'xy'[k]}", "element")
    Fq = np.empty((E, q, m))
    for j in range(m):
        Fq[:, :, j] = disc._coef(disc._F[j], env_q, (E, q), f"F{j + 1}", "element")

    # Flux terms: sum_q wq (K grad u + e) . grad phi_a.
    kflux = np.einsum("eqji,eid->eqjd", Kq, gradu)
    stiff_el = np.einsum("eq,eqjd,ead->eaj", wq, kflux, disc.grads)
    conv_el = np.einsum("eq,eqjd,ead->eaj", wq, eq, disc.grads)
    load_el = np.einsum("eq,eqj,aq->eaj", wq, Fq, disc.shape)
    np.add.at(stiffness, disc.elem_dofs, stiff_el)
    np.add.at(convection, disc.elem_dofs, conv_el)
    np.add.at(load, disc.elem_dofs, load_el)

    # Neumann data on gamma2.
    if disc._g is not None and disc.neumann is not None:
        blk = disc.neumann
        Ub = np.einsum("aq,fam->fqm", blk["shape"], u_new[blk["nodes"]])
        env_b = disc._env(Ub, blk["qpx"], t)
        wb = blk["measures"][:, None] * blk["qw"][None, :]
        nfac, qb = wb.shape
        gq = np.empty((nfac, qb, m))
        for j in range(m):
            gq[:, :, j] = disc._coef(disc._g[j], env_b, (nfac, qb), f"g{j + 1}", "facet")
        g_el = np.einsum("fq,fqj,aq->faj", wb, gq, blk["shape"])
        np.add.at(boundary, blk["dofs"], g_el)

    beta_vector, beta_pairing = penalty_form(disc, u_new)
    penalty = beta_vector / eps if eps is not None else np.zeros(disc.ndof)

    total = parabolic + stiffness + convection + penalty - load - boundary
    residual = total[disc.free_dofs]

    jacobian = None
    if want_jacobian:
        rows_all, cols_all, data_all = [], [], []

        # Storage block: diagonal in nodes, dense in components.
        dB = disc.nodal_b_jacobian(u_new)  # (n, m, m)
        node_dofs = (np.arange(disc.n_nodes)[:, None] * m + np.arange(m)[None, :])
        rows_all.append(np.repeat(node_dofs, m, axis=1).ravel())
        cols_all.append(np.tile(node_dofs, (1, m)).ravel())
        data_all.append((disc.lumped[:, None, None] * dB / dt).ravel())

        # Element blocks (E, nloc*m, nloc*m) in (a, j) x (b, l) layout.
        elem_block = np.zeros((E, nloc, m, nloc, m))
        GG = np.einsum("ead,ebd->eab", disc.grads, disc.grads)
        Kbar = np.einsum("eq,eqjl->ejl", wq, Kq)
        elem_block += np.einsum("ejl,eab->eajbl", Kbar, GG)

        h = disc.fd_rel * (1.0 + np.abs(Uq))
        dKflux = np.empty((E, q, m, m, disc.mesh.dim))
        deq = np.empty((E, q, m, m, disc.mesh.dim))
        dFq = np.empty((E, q, m, m))
        for l in range(m):
            env_p = dict(env_q)
            env_m = dict(env_q)
            env_p[disc._unames[l]] = Uq[:, :, l] + h[:, :, l]
            env_m[disc._unames[l]] = Uq[:, :, l] - h[:, :, l]
            twoh = 2.0 * h[:, :, l]
            for j in range(m):
                dK = np.empty((E, q, m))
                for i in range(m):
                    kp = disc._coef(disc._K[j][i], env_p, (E, q), f"K{j + 1}{i + 1}", "element")
                    km = disc._coef(disc._K[j][i], env_m, (E, q), f"K{j + 1}{i + 1}", "element")
                    dK[:, :, i] = (kp - km) / twoh
                dKflux[:, :, j, l, :] = np.einsum("eqi,eid->eqd", dK, gradu)
                for k in range(disc.mesh.dim):
                    ep = disc._coef(disc._e[j][k], env_p, (E, q), f"e{j + 1}", "element")
                    em = disc._coef(disc._e[j][k], env_m, (E, q), f"e{j + 1}", "element")
                    deq[:, :, j, l, k] = (ep - em) / twoh
                fp = disc._coef(disc._F[j], env_p, (E, q), f"F{j + 1}", "element")
                fm = disc._coef(disc._F[j], env_m, (E, q), f"F{j + 1}", "element")
                dFq[:, :, j, l] = (fp - fm) / twoh
        elem_block += np.einsum("eq,eqjld,bq,ead->eajbl", wq, dKflux + deq,
                                disc.shape, disc.grads)
        elem_block -= np.einsum("eq,eqjl,aq,bq->eajbl", wq, dFq,
                                disc.shape, disc.shape)

        flat_dofs = disc.elem_dofs.reshape(E, nloc * m)
        rows_all.append(np.repeat(flat_dofs, nloc * m, axis=1).ravel())
        cols_all.append(np.tile(flat_dofs, (1, nloc * m)).ravel())
        data_all.append(elem_block.reshape(E, nloc * m, nloc * m).ravel())

        if disc._g is not None and disc.neumann is not None:
            blk = disc.neumann
            nfac, nper = blk["nodes"].shape
            qb = len(blk["qw"])
            Ub = np.einsum("aq,fam->fqm", blk["shape"], u_new[blk["nodes"]])
            env_b = disc._env(Ub, blk["qpx"], t)
            wb = blk["measures"][:, None] * blk["qw"][None, :]
            hb = disc.fd_rel * (1.0 + np.abs(Ub))
            dgq = np.empty((nfac, qb, m, m))
            for l in range(m):
                env_p = dict(env_b)
                env_m = dict(env_b)
                env_p[disc._unames[l]] = Ub[:, :, l] + hb[:, :, l]
                env_m[disc._unames[l]] = Ub[:, :, l] - hb[:, :, l]
                for j in range(m):
                    gp = disc._coef(disc._g[j], env_p, (nfac, qb), f"g{j + 1}", "facet")
                    gm = disc._coef(disc._g[j], env_m, (nfac, qb), f"g{j + 1}", "facet")
                    dgq[:, :, j, l] = (gp - gm) / (2.0 * hb[:, :, l])
            fblock = -np.einsum("fq,fqjl,aq,bq->fajbl", wb, dgq,
                                blk["shape"], blk["shape"])
            fdofs = blk["dofs"].reshape(nfac, nper * m)
            rows_all.append(np.repeat(fdofs, nper * m, axis=1).ravel())
            cols_all.append(np.tile(fdofs, (1, nper * m)).ravel())
            data_all.append(fblock.reshape(nfac, nper * m, nper * m).ravel())

        if eps is not None:
            prows, pcols, pdata = _penalty_jacobian_blocks(disc, u_new)
            rows_all.extend(prows)
            cols_all.extend(pcols)
            data_all.extend([d / eps for d in pdata])

        J = sp.coo_matrix(
            (np.concatenate([np.asarray(d, dtype=float).ravel() for d in data_all]),
             (np.concatenate([np.asarray(r).ravel() for r in rows_all]),
              np.concatenate([np.asarray(c).ravel() for c in cols_all]))),
            shape=(disc.ndof, disc.ndof),
        ).tocsr()
        jacobian = J[disc.free_dofs, :][:, disc.free_dofs]

    return WeakFormTerms(
        residual=residual,
        jacobian=jacobian,
        free_dofs=disc.free_dofs,
        parabolic=parabolic,
        stiffness=stiffness,
        convection=convection,
        load=load,
        boundary=boundary,
        penalty=penalty,
        beta_vector=beta_vector,
        beta_pairing=beta_pairing,
    )


def assemble_residual(disc, u_new, u_old, dt, eps, t):
    """Residual of one implicit Euler step (``eps=None`` drops the penalty)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _assemble(disc, u_new, u_old, dt, eps, t, want_jacobian=False)


def assemble_jacobian(disc, u_new, u_old, dt, eps, t):
    """Reduced Jacobian of :func:`assemble_residual` w.r.t. the new state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _assemble(disc, u_new, u_old, dt, eps, t, want_jacobian=True).jacobian


def assemble_system(disc, u_new, u_old, dt, eps, t):
    """Residual and Jacobian in one pass (shared coefficient evaluations)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _assemble(disc, u_new, u_old, dt, eps, t, want_jacobian=True)


def jacobian_fd_error(disc, u_new, u_old, dt, eps, t, n_dirs=5, seed=0):
    """Max relative error of J v against a central difference of the residual."""
    rng = np.random.default_rng(seed)
    terms = assemble_system(disc, u_new, u_old, dt, eps, t)
    J = terms.jacobian
    worst = 0.0
    scale = 1.0 + float(np.max(np.abs(u_new)))
    for _ in range(n_dirs):
        v = rng.normal(size=len(disc.free_dofs))
        v /= np.max(np.abs(v))
        h = 1e-6 * scale
        up = u_new.copy().ravel()
        um = u_new.copy().ravel()
        up[disc.free_dofs] += h * v
        um[disc.free_dofs] -= h * v
        rp = assemble_residual(disc, up.reshape(-1, disc.m), u_old, dt, eps, t).residual
        rm = assemble_residual(disc, um.reshape(-1, disc.m), u_old, dt, eps, t).residual
        fd = (rp - rm) / (2.0 * h)
        jv = J @ v
        denom = float(np.max(np.abs(jv)))
        err = float(np.max(np.abs(fd - jv))) / max(denom, 1e-30)
        worst = max(worst, err)
    return worst


def feasible_test_bank(disc, n, seed=0, scale=1.0):
    """Random nodal fields in the discrete constraint set.

    Members carry the Dirichlet data on gamma1 and are clamped to <= 0 at
    constrained dofs.
    """
    rng = np.random.default_rng(seed)
    bank = []
    for _ in range(n):
        v = rng.uniform(-scale, scale, size=(disc.n_nodes, disc.m))
        v = disc.apply_dirichlet(v)
        flat = v.ravel()
        flat[disc.constrained_dofs] = np.minimum(flat[disc.constrained_dofs], 0.0)
        bank.append(flat.reshape(disc.n_nodes, disc.m))
    return bank


def vi_residual(disc, trajectory, test_bank):
    """Minimum over the bank of the time-integrated inequality defect.

    For each feasible phi the defect is the action of the penalty-free
    step residual on (phi - u^n), summed over steps with the backward
    difference standing in for the time derivative of B(u).  A nonnegative
    return certifies the discrete inequality on the bank.
    """
    fields = trajectory.fields
    nondir = np.ones(disc.ndof, dtype=bool)
    nondir[disc.dirichlet_dofs] = False
    for k, phi in enumerate(test_bank):
        flat = np.asarray(phi).ravel()
        if np.any(flat[disc.constrained_dofs] > 0.0):
            raise ValueError(f"test field {k} violates the sign constraint on gamma3")
    worst = np.inf
    actions = []
    for step in range(1, len(fields)):
        u_new = fields[step]
        u_old = fields[step - 1]
        dt = u_new.t - u_old.t
        terms = assemble_residual(disc, u_new.values, u_old.values, dt, None, u_new.t)
        r = terms.nopenalty_residual * nondir
        actions.append((r, u_new.values.ravel(), dt))
    for phi in test_bank:
        flat = np.asarray(phi).ravel()
        total = 0.0
        for r, uflat, dt in actions:
            total += dt * float(r @ (flat - uflat))
        worst = min(worst, total)
    return float(worst)
