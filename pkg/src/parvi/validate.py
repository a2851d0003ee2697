"""Admissibility checks for problem data.

The structure conditions on B, K, e, F, g are universally quantified, so
they are checked by seeded sampling over a declared admissible box plus
growth rays.  A successful sampled check is reported as 'sampled-pass',
never as a proof; failures always carry a concrete witness point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex

__all__ = [
    "CheckResult",
    "ValidationReport",
    "legendre_psi",
    "legendre_psi_batch",
    "check_monotone_gradient",
    "check_K_pd_bounded",
    "check_A4",
    "check_A4_alt",
    "check_growth",
    "validate",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    verdict: str  # 'pass' | 'sampled-pass' | 'fail'
    detail: str = ""
    witness: dict | None = None
    constants: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.verdict != "fail"


@dataclass
class ValidationReport:
    entries: list

    @property
    def passed(self):
        return all(entry.ok for entry in self.entries)

    def find(self, name):
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def failures(self):
        return [entry for entry in self.entries if not entry.ok]

    def format(self):
        lines = []
        for entry in self.entries:
            lines.append(f"{entry.name:24s} {entry.verdict}")
            if entry.detail:
                lines.append(f"{'':24s}   {entry.detail}")
            if entry.witness:
                lines.append(f"{'':24s}   witness: {entry.witness}")
        return "\n".join(lines)


def _b_batch(spec):
    fns = [ex.compile_expr(bj) for bj in spec.B]
    names = spec.uvar_names()

    def evaluate(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        env = {names[j]: Z[:, j] for j in range(spec.m)}
        return np.column_stack([np.broadcast_to(f(env), len(Z)).astype(float) for f in fns])

    return evaluate


_GL_CACHE = {}


def _gauss01(n):
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def legendre_psi(spec, z, quad_n=16):
    """Energy density for the storage term: the integral from 0 to 1 of
    (B(z) - B(s z)) . z ds, by ``quad_n``-node Gauss-Legendre quadrature
    (exact for polynomial B up to degree 2*quad_n - 1)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return float(legendre_psi_batch(spec, z.reshape(1, -1), quad_n)[0])


def legendre_psi_batch(spec, Z, quad_n=16):
    """Vectorized :func:`legendre_psi` over rows of Z (n, m) -> (n,)."""
    Z = np.asarray(Z, dtype=float)
    evalB = _b_batch(spec)
    s_nodes, s_weights = _gauss01(quad_n)
    out = np.einsum("ij,ij->i", evalB(Z), Z)
    for s, w in zip(s_nodes, s_weights):
        out -= w * np.einsum("ij,ij->i", evalB(s * Z), Z)
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.isfinite(out)))
        raise ex.ExprEvalError(f"non-finite energy density at z = {Z[bad].tolist()}")
    return out


def _sample_box(rng, n, m, box):
    return rng.uniform(-box, box, size=(n, m))


def _with_corners(Z, box):
    m = Z.shape[1]
    if m > 6:
        return Z
    corners = np.array(
        [[box * (1 if (k >> j) & 1 else -1) for j in range(m)] for k in range(2**m)]
    )
    return np.vstack([Z, corners, np.zeros((1, m))])


def check_monotone_gradient(spec, samples=1000, box=None, seed=42,
                            h_rel=1e-5, sym_tol=1e-6):
    """Strict monotonicity of B plus finite-difference Jacobian symmetry.

    Both are necessary for B to be the gradient of a strictly convex
    potential; they are sampled, not proved.
    """
    box = spec.box if box is None else box
    rng = np.random.default_rng(seed)
    evalB = _b_batch(spec)
    try:
        Z1 = _sample_box(rng, samples, spec.m, box)
        Z2 = _sample_box(rng, samples, spec.m, box)
        keep = np.linalg.norm(Z1 - Z2, axis=1) > 1e-12
        Z1, Z2 = Z1[keep], Z2[keep]
        prods = np.einsum("ij,ij->i", evalB(Z1) - evalB(Z2), Z1 - Z2)
        if not np.all(np.isfinite(prods)):
            bad = int(np.argmax(~np.isfinite(prods)))
            return CheckResult(
                "monotone-B", "fail", "B evaluation produced a non-finite value",
                witness={"z1": Z1[bad].tolist(), "z2": Z2[bad].tolist()},
            )
        if np.any(prods <= 0):
            bad = int(np.argmin(prods))
            return CheckResult(
                "monotone-B", "fail",
                "(B(z1) - B(z2)) . (z1 - z2) <= 0 at a sampled pair",
                witness={
                    "z1": Z1[bad].tolist(),
                    "z2": Z2[bad].tolist(),
                    "product": float(prods[bad]),
                },
            )
        # Jacobian symmetry at a subset of points, by central differences.
        npts = min(64, len(Z1))
        worst = 0.0
        worst_at = None
        for z in Z1[:npts]:
            J = np.empty((spec.m, spec.m))
            for j in range(spec.m):
                h = h_rel * (1.0 + abs(z[j]))
                zp, zm = z.copy(), z.copy()
                zp[j] += h
                zm[j] -= h
                J[:, j] = (evalB(zp)[0] - evalB(zm)[0]) / (2.0 * h)
            asym = float(np.max(np.abs(J - J.T)))
            scale = 1.0 + float(np.max(np.abs(J)))
            if asym / scale > worst:
                worst = asym / scale
                worst_at = (z.copy(), J)
        if worst > sym_tol:
            z, J = worst_at
            return CheckResult(
                "monotone-B", "fail",
                f"Jacobian of B is asymmetric (relative asymmetry {worst:.2e})",
                witness={"z": z.tolist(), "jacobian": J.tolist()},
            )
        return CheckResult(
            "monotone-B", "sampled-pass",
            f"{len(Z1)} monotone pairs, Jacobian asymmetry <= {worst:.2e} on {npts} points",
        )
    except ex.ExprEvalError as exc:
        return CheckResult("monotone-B", "fail", str(exc))


def _matrix_batch(spec, entries):
    fns = [[ex.compile_expr(entries[j][i]) for i in range(spec.m)] for j in range(spec.m)]
    names = spec.uvar_names()

    def evaluate(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        env = {names[j]: Z[:, j] for j in range(spec.m)}
        out = np.empty((len(Z), spec.m, spec.m))
        for j in range(spec.m):
            for i in range(spec.m):
                out[:, j, i] = np.broadcast_to(fns[j][i](env), len(Z))
        return out

    return evaluate


def check_K_pd_bounded(spec, samples=1000, box=None, seed=42):
    """Uniform ellipticity and boundedness of K and e over the box.

    At each sampled z the smallest eigenvalue of the symmetric part of
    K(z) is the sharp ellipticity constant; the reported c is its minimum.
    """
    box = spec.box if box is None else box
    rng = np.random.default_rng(seed)
    evalK = _matrix_batch(spec, spec.K)
    e_fns = [[ex.compile_expr(spec.e[j][k]) for k in range(spec.dim)] for j in range(spec.m)]
    names = spec.uvar_names()
    try:
        Z = _with_corners(_sample_box(rng, samples, spec.m, box), box)
        Kmat = evalK(Z)
        if not np.all(np.isfinite(Kmat)):
            bad = int(np.argmax(~np.isfinite(Kmat).reshape(len(Z), -1).any(axis=1)))
            return CheckResult("elliptic-K", "fail", "K evaluation non-finite",
                               witness={"z": Z[bad].tolist()})
        sym = 0.5 * (Kmat + np.transpose(Kmat, (0, 2, 1)))
        eigvals, eigvecs = np.linalg.eigh(sym)
        lam_min = eigvals[:, 0]
        idx = int(np.argmin(lam_min))
        c_est = float(lam_min[idx])
        env = {names[j]: Z[:, j] for j in range(spec.m)}
        e_abs = np.zeros(len(Z))
        for j in range(spec.m):
            for k in range(spec.dim):
                e_abs = np.maximum(e_abs, np.abs(np.broadcast_to(e_fns[j][k](env), len(Z))))
        if not np.all(np.isfinite(e_abs)):
            bad = int(np.argmax(~np.isfinite(e_abs)))
            return CheckResult("elliptic-K", "fail", "e evaluation non-finite",
                               witness={"z": Z[bad].tolist()})
        c_bound = float(np.max(np.abs(Kmat).reshape(len(Z), -1).max(axis=1) + e_abs))
        if c_est <= 0:
            xi = eigvecs[idx, :, 0]
            quad = float(xi @ Kmat[idx] @ xi)
            return CheckResult(
                "elliptic-K", "fail",
                f"quadratic form of K is not uniformly positive (min {c_est:.3e})",
                witness={"z": Z[idx].tolist(), "xi": xi.tolist(), "quadratic_form": quad},
                constants={"c": c_est},
            )
        return CheckResult(
            "elliptic-K", "sampled-pass",
            f"ellipticity c >= {c_est:.6g}, |K|+|e| <= {c_bound:.6g} on {len(Z)} points",
            constants={"c": c_est, "bound": c_bound},
        )
    except ex.ExprEvalError as exc:
        return CheckResult("elliptic-K", "fail", str(exc))


def _a4_branch(N, nu):
    if N == 1:
        return (nu + 1.0) / 2.0
    if N == 2:
        return (3.0 * nu + 1.0) / (3.0 + nu)
    if N == 3:
        return nu + 2.0 - math.sqrt(nu * nu - nu + 3.0)
    raise ValueError(f"N must be 1, 2 or 3, got {N}")


def check_A4(nu, p, alpha, N):
    """Literal exponent compatibility predicate.

    True iff p <= nu and either 0 < alpha <= min(nu, 1), or
    1 < alpha < (N + alpha + 1)/N together with alpha below the
    dimension-dependent branch bound.  Returns (ok, reason).
    """
    if N not in (1, 2, 3):
        raise ValueError(f"N must be 1, 2 or 3, got {N}")
    if nu <= 0 or alpha <= 0 or p < 0:
        raise ValueError("need nu > 0, alpha > 0, p >= 0")
    if p > nu:
        return False, f"p = {p} exceeds nu = {nu}"
    if 0 < alpha <= min(nu, 1.0):
        return True, f"alpha = {alpha} <= min(nu, 1) = {min(nu, 1.0)}"
    branch = _a4_branch(N, nu)
    if 1.0 < alpha < (N + alpha + 1.0) / N and alpha < branch:
        return True, (
            f"1 < alpha = {alpha} < (N+alpha+1)/N = {(N + alpha + 1.0) / N:.6g} "
            f"and alpha < {branch:.6g}"
        )
    return False, f"alpha = {alpha} satisfies neither exponent clause"


def check_A4_alt(nu, p, alpha, N):
    """Variant of :func:`check_A4` with the upper window (N + nu + 1)/N."""
    if N not in (1, 2, 3):
        raise ValueError(f"N must be 1, 2 or 3, got {N}")
    if p > nu:
        return False, f"p = {p} exceeds nu = {nu}"
    if 0 < alpha <= min(nu, 1.0):
        return True, f"alpha = {alpha} <= min(nu, 1) = {min(nu, 1.0)}"
    branch = _a4_branch(N, nu)
    if 1.0 < alpha < (N + nu + 1.0) / N and alpha < branch:
        return True, f"1 < alpha = {alpha} < (N+nu+1)/N and alpha < {branch:.6g}"
    return False, f"alpha = {alpha} satisfies neither exponent clause"


def _growth_check(name, fns, m, dim, t_max, exponent, samples, box, seed):
    rng = np.random.default_rng(seed)
    names = [f"u{j + 1}" for j in range(m)]

    def norm_at(Z):
        n = len(Z)
        env = {names[j]: Z[:, j] for j in range(m)}
        env["x"] = rng.uniform(0.0, 1.0, n)
        env["y"] = rng.uniform(0.0, 1.0, n) if dim == 2 else 0.0
        env["t"] = rng.uniform(0.0, t_max, n)
        vals = np.column_stack([np.broadcast_to(f(env), n).astype(float) for f in fns])
        return np.linalg.norm(vals, axis=1)

    try:
        Z = _sample_box(rng, samples, m, box)
        ratios = norm_at(Z) / (np.linalg.norm(Z, axis=1) ** exponent + 1.0)
        if not np.all(np.isfinite(ratios)):
            bad = int(np.argmax(~np.isfinite(ratios)))
            return CheckResult(name, "fail", "non-finite value in the box",
                               witness={"z": Z[bad].tolist()})
        sup_ratio = float(np.max(ratios))
        # Ray test: double |z| and watch the growth ratio.
        dirs = rng.normal(size=(8, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ray_sup = []
        for k in range(9):
            R = box * 2.0**k
            r = norm_at(dirs * R) / (R**exponent + 1.0)
            if not np.all(np.isfinite(r)):
                bad = int(np.argmax(~np.isfinite(r)))
                return CheckResult(name, "fail", f"non-finite value at radius {R:g}",
                                   witness={"z": (dirs[bad] * R).tolist()})
            ray_sup.append(float(np.max(r)))
        consecutive = 0
        for k in range(len(ray_sup) - 1):
            if ray_sup[k + 1] > 1.5 * max(ray_sup[k], 1e-300):
                consecutive += 1
                if consecutive >= 5:
                    return CheckResult(
                        name, "fail",
                        f"ratio diverges along rays: {['%.3g' % v for v in ray_sup]}",
                        witness={"radii": [box * 2.0**j for j in range(len(ray_sup))],
                                 "ratios": ray_sup},
                        constants={"sup_ratio": sup_ratio},
                    )
            else:
                consecutive = 0
        return CheckResult(
            name, "sampled-pass",
            f"sup ratio {sup_ratio:.6g} in the box, bounded along rays",
            constants={"sup_ratio": sup_ratio},
        )
    except ex.ExprEvalError as exc:
        return CheckResult(name, "fail", str(exc))


def check_growth(spec, samples=1000, box=None, seed=42):
    """Polynomial growth of F (exponent p) and g (exponent alpha)."""
    box = spec.box if box is None else box
    out = [
        _growth_check(
            "growth-F", [ex.compile_expr(f) for f in spec.F],
            spec.m, spec.dim, spec.t_max, spec.p, samples, box, seed,
        )
    ]
    if spec.g is not None:
        out.append(
            _growth_check(
                "growth-g", [ex.compile_expr(g) for g in spec.g],
                spec.m, spec.dim, spec.t_max, spec.alpha, samples, box, seed + 1,
            )
        )
    return out


def _legendre_entry(spec, samples, box, seed):
    rng = np.random.default_rng(seed)
    try:
        Z = _with_corners(_sample_box(rng, samples, spec.m, box), box)
        psi = legendre_psi_batch(spec, Z)
        if np.any(psi < -1e-10):
            bad = int(np.argmin(psi))
            return CheckResult(
                "legendre-growth", "fail",
                "energy density is negative (B cannot be a monotone gradient)",
                witness={"z": Z[bad].tolist(), "psi": float(psi[bad])},
            )
        norm = np.linalg.norm(Z, axis=1)
        large = norm >= 0.5 * box
        power = norm[large] ** (spec.nu + 1.0)
        c1 = float(np.min(psi[large] / power)) if large.any() else 0.0
        c1 = max(c1, 1e-12)
        c2 = float(max(0.0, np.max(c1 * norm ** (spec.nu + 1.0) - psi)))
        return CheckResult(
            "legendre-growth", "sampled-pass",
            f"psi >= {c1:.4g}|z|^{spec.nu + 1:g} - {c2:.4g} on {len(Z)} points",
            constants={"c1": c1, "c2": c2},
        )
    except ex.ExprEvalError as exc:
        return CheckResult("legendre-growth", "fail", str(exc))


def _initial_entry(spec, mesh):
    try:
        if mesh is not None:
            pts = mesh.nodes
        else:
            grid = np.linspace(0.0, 1.0, 21)
            if spec.dim == 1:
                pts = grid.reshape(-1, 1)
            else:
                X, Y = np.meshgrid(grid, grid)
                pts = np.column_stack([X.ravel(), Y.ravel()])
        env = {"x": pts[:, 0]}
        env["y"] = pts[:, 1] if spec.dim == 2 else 0.0
        U0 = np.column_stack(
            [np.broadcast_to(ex.compile_expr(u)(env), len(pts)).astype(float)
             for u in spec.u0]
        )
        if not np.all(np.isfinite(U0)):
            bad = int(np.argmax(~np.isfinite(U0).any(axis=1)))
            return CheckResult("initial-data", "fail",
                               "u0 is non-finite at a mesh node",
                               witness={"x": pts[bad].tolist()})
        psi = legendre_psi_batch(spec, U0)
        uB = np.einsum("ij,ij->i", U0, _b_batch(spec)(U0))
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(uB))):
            return CheckResult("initial-data", "fail",
                               "initial energy density is non-finite")
        return CheckResult(
            "initial-data", "pass",
            f"u0 finite at {len(pts)} points, max psi(u0) = {float(np.max(psi)):.6g}",
        )
    except ex.ExprEvalError as exc:
        return CheckResult("initial-data", "fail", str(exc))


def _uniqueness_entries(spec, samples, box, seed):
    rng = np.random.default_rng(seed)
    entries = []
    # Structure: K diagonal with K^j a function of u_j alone.
    ok_structure = True
    for j in range(spec.m):
        for i in range(spec.m):
            node = spec.K[j][i]
            if i == j:
                if not ex.free_vars(node) <= {f"u{j + 1}"}:
                    ok_structure = False
            else:
                if ex.free_vars(node) or ex.eval_expr(node, {}) != 0.0:
                    ok_structure = False
    entries.append(
        CheckResult(
            "uniqueness-structure",
            "pass" if ok_structure else "fail",
            "K is diagonal with K^j depending on u_j only"
            if ok_structure
            else "K is not diagonal in u_j",
        )
    )
    if not ok_structure:
        return entries
    # Two-sided bounds c1 <= K^j <= c2 on the box.
    xi = np.linspace(-box, box, max(64, samples // 8))
    c1, c2 = math.inf, -math.inf
    try:
        for j in range(spec.m):
            vals = np.broadcast_to(
                ex.compile_expr(spec.K[j][j])({f"u{j + 1}": xi}), len(xi)
            ).astype(float)
            c1 = min(c1, float(vals.min()))
            c2 = max(c2, float(vals.max()))
        verdict = "sampled-pass" if c1 > 0 else "fail"
        entries.append(
            CheckResult(
                "uniqueness-bounds", verdict,
                f"{c1:.6g} <= K^j <= {c2:.6g} sampled on the box",
                constants={"c1": c1, "c2": c2},
            )
        )
    except ex.ExprEvalError as exc:
        entries.append(CheckResult("uniqueness-bounds", "fail", str(exc)))
        return entries
    # Lipschitz estimates by sampled difference quotients.
    try:
        cl = 0.0
        for j in range(spec.m):
            f = ex.compile_expr(spec.K[j][j])
            for scale in (1.0, 1e-3):
                a = rng.uniform(-box, box, samples)
                b = a + rng.uniform(-scale, scale, samples)
                fa = np.broadcast_to(f({f"u{j + 1}": a}), samples).astype(float)
                fb = np.broadcast_to(f({f"u{j + 1}": b}), samples).astype(float)
                with np.errstate(divide="ignore", invalid="ignore"):
                    q = np.abs(fa - fb) / np.abs(a - b)
                q = q[np.isfinite(q)]
                if q.size:
                    cl = max(cl, float(np.max(q)))
        names = spec.uvar_names()
        vec_fns = [(f"e{j + 1}", [ex.compile_expr(c) for c in spec.e[j]])
                   for j in range(spec.m)]
        vec_fns.append(("F", [ex.compile_expr(f) for f in spec.F]))
        if spec.g is not None:
            vec_fns.append(("g", [ex.compile_expr(gj) for gj in spec.g]))
        for _, fns in vec_fns:
            for scale in (1.0, 1e-3):
                Z1 = rng.uniform(-box, box, (samples, spec.m))
                Z2 = Z1 + rng.uniform(-scale, scale, (samples, spec.m))
                x = rng.uniform(0.0, 1.0, samples)
                y = rng.uniform(0.0, 1.0, samples) if spec.dim == 2 else 0.0
                t = rng.uniform(0.0, spec.t_max, samples)
                env1 = {names[j]: Z1[:, j] for j in range(spec.m)}
                env2 = {names[j]: Z2[:, j] for j in range(spec.m)}
                for env in (env1, env2):
                    env.update(x=x, y=y, t=t)
                V1 = np.column_stack(
                    [np.broadcast_to(f(env1), samples).astype(float) for f in fns])
                V2 = np.column_stack(
                    [np.broadcast_to(f(env2), samples).astype(float) for f in fns])
                dz = np.linalg.norm(Z1 - Z2, axis=1)
                with np.errstate(divide="ignore", invalid="ignore"):
                    q = np.linalg.norm(V1 - V2, axis=1) / dz
                q = q[np.isfinite(q)]
                if q.size:
                    cl = max(cl, float(np.max(q)))
        entries.append(
            CheckResult(
                "uniqueness-lipschitz", "sampled-pass",
                f"Lipschitz constant estimate C_L ~= {cl:.6g}",
                constants={"C_L": cl},
            )
        )
    except ex.ExprEvalError as exc:
        entries.append(CheckResult("uniqueness-lipschitz", "fail", str(exc)))
    return entries


def validate(spec, mesh=None, samples=1000, seed=42, box=None):
    """Run every admissibility check and return a :class:`ValidationReport`."""
    box = spec.box if box is None else box
    entries = [check_monotone_gradient(spec, samples, box, seed)]
    entries.append(_legendre_entry(spec, samples, box, seed + 10))
    entries.append(check_K_pd_bounded(spec, samples, box, seed + 20))
    entries.extend(check_growth(spec, samples, box, seed + 30))
    ok, reason = check_A4(spec.nu, spec.p, spec.alpha, spec.dim)
    entries.append(CheckResult("exponents", "pass" if ok else "fail", reason))
    entries.append(_initial_entry(spec, mesh))
    if spec.uniqueness_mode:
        entries.extend(_uniqueness_entries(spec, samples, box, seed + 40))
    return ValidationReport(entries)
