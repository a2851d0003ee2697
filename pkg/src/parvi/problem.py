"""Problem definitions: coefficient functions, exponents, boundary layout.

A problem file is a line-oriented sectioned key/value text:

    [problem]       m, dim, nu, p, alpha, uniqueness_mode
    [coefficients]  B1..Bm, K11..Kmm, e1x..emy, F1..Fm, g1..gm
    [initial]       u01..u0m
    [boundary]      gamma1/gamma2/gamma3 side selectors, constraint,
                    optional dirichlet1..m
    [domain]        kind = interval|square|file plus n / nx,ny / path
    [solver]        dt, t_end, eps, and other solver overrides

Coefficient values are expressions in the DSL of :mod:`parvi.expr`.
B, K and e may reference only u1..um; F and g also x, y, t; initial and
Dirichlet data only x, y.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

from . import expr as ex
from . import mesh as msh

__all__ = [
    "ProblemSpec",
    "ProblemFormatError",
    "LoadedProblem",
    "parse_problem_text",
    "load_problem",
    "bundled_path",
    "BUNDLED_PROBLEMS",
]

BUNDLED_PROBLEMS = ("obstacle1d", "heat", "nlheat", "twocomp2d")
BUNDLED_INVALID = ("bad_nonmonotone",)


class ProblemFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Parsed coefficient functions and structure data for one system."""

    m: int
    dim: int
    nu: float
    p: float
    alpha: float
    B: tuple  # m expressions of u
    K: tuple  # m x m expressions of u
    e: tuple  # m tuples of dim expressions of u
    F: tuple  # m expressions of (x, t, u)
    g: tuple | None  # m expressions of (x, t, u) on the Neumann part
    u0: tuple  # m expressions of x
    dirichlet: tuple | None  # m expressions of x, None means homogeneous
    constraint_mask: tuple  # per-component bool: constrained on gamma3
    uniqueness_mode: bool = False
    box: float = 10.0  # admissible |u_i| range for sampled checks
    t_max: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ProblemFormatError("m must be >= 1")
        if self.dim not in (1, 2):
            raise ProblemFormatError("dim must be 1 or 2")
        if self.nu <= 0:
            raise ProblemFormatError("nu must be positive")
        if self.p < 0:
            raise ProblemFormatError("p must be nonnegative")
        if self.alpha <= 0:
            raise ProblemFormatError("alpha must be positive")
        self._check_vars()

    def _check_vars(self):
        uvars = {f"u{j + 1}" for j in range(self.m)}
        space = {"x", "y"} if self.dim == 2 else {"x"}
        roles = [("B", self.B, uvars), ("F", self.F, uvars | space | {"t"})]
        if self.g is not None:
            roles.append(("g", self.g, uvars | space | {"t"}))
        roles.append(("u0", self.u0, space))
        if self.dirichlet is not None:
            roles.append(("dirichlet", self.dirichlet, space))
        for j in range(self.m):
            for i in range(self.m):
                roles.append((f"K{j + 1}{i + 1}", (self.K[j][i],), uvars))
            for k in range(self.dim):
                roles.append((f"e{j + 1}{'xy'[k]}", (self.e[j][k],), uvars))
        for name, nodes, allowed in roles:
            for node in nodes:
                bad = ex.free_vars(node) - allowed
                if bad:
                    raise ProblemFormatError(
                        f"{name} may not reference {sorted(bad)}"
                    )

    def uvar_names(self):
        return tuple(f"u{j + 1}" for j in range(self.m))


@dataclass(frozen=True)
class LoadedProblem:
    """A problem file resolved into spec, mesh and solver overrides."""

    name: str
    text: str
    spec: ProblemSpec
    mesh: msh.Mesh
    solver_options: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)


def _parse_sections(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
            continue
        if current is None:
            raise ProblemFormatError(f"line {lineno}: data before any [section]")
        if "=" not in line:
            raise ProblemFormatError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        sections[current][key.strip().lower()] = value.strip()
    return sections


def _want(section, key, sections, convert=str, default=None):
    block = sections.get(section, {})
    if key not in block:
        if default is not None:
            return default
        raise ProblemFormatError(f"missing {key!r} in [{section}]")
    try:
        return convert(block[key])
    except ValueError as exc:
        raise ProblemFormatError(f"[{section}] {key}: {exc}") from exc


def _expr(section, key, sections, default=None):
    block = sections.get(section, {})
    if key not in block:
        if default is not None:
            return ex.parse_expr(default)
        raise ProblemFormatError(f"missing {key!r} in [{section}]")
    try:
        return ex.parse_expr(block[key])
    except ex.ExprSyntaxError as exc:
        raise ProblemFormatError(f"[{section}] {key}: {exc}") from exc


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_problem_text(text, name="<text>"):
    """Parse problem text into (spec, domain dict, solver overrides)."""
    sections = _parse_sections(text)
    for sec in sections:
        if sec not in ("problem", "coefficients", "initial", "boundary", "domain", "solver"):
            raise ProblemFormatError(f"unknown section [{sec}]")
    m = _want("problem", "m", sections, int)
    dim = _want("problem", "dim", sections, int)
    nu = _want("problem", "nu", sections, float)
    p = _want("problem", "p", sections, float)
    alpha = _want("problem", "alpha", sections, float)
    uniq = _BOOL.get(
        str(_want("problem", "uniqueness_mode", sections, str, "false")).lower()
    )
    if uniq is None:
        raise ProblemFormatError("uniqueness_mode must be a boolean")
    box = _want("problem", "box", sections, float, 10.0)

    B = tuple(_expr("coefficients", f"b{j + 1}", sections) for j in range(m))
    K = tuple(
        tuple(
            _expr("coefficients", f"k{j + 1}{i + 1}", sections, default="0")
            for i in range(m)
        )
        for j in range(m)
    )
    for j in range(m):
        if f"k{j + 1}{j + 1}" not in sections.get("coefficients", {}):
            raise ProblemFormatError(f"missing K{j + 1}{j + 1} in [coefficients]")
    e = tuple(
        tuple(
            _expr("coefficients", f"e{j + 1}{'xy'[k]}", sections, default="0")
            for k in range(dim)
        )
        for j in range(m)
    )
    F = tuple(_expr("coefficients", f"f{j + 1}", sections, default="0") for j in range(m))
    coeff_keys = sections.get("coefficients", {})
    has_g = any(f"g{j + 1}" in coeff_keys for j in range(m))
    g = (
        tuple(_expr("coefficients", f"g{j + 1}", sections, default="0") for j in range(m))
        if has_g
        else None
    )
    u0 = tuple(_expr("initial", f"u0{j + 1}", sections) for j in range(m))

    bnd = sections.get("boundary", {})
    has_dirichlet_data = any(f"dirichlet{j + 1}" in bnd for j in range(m))
    dirichlet = (
        tuple(_expr("boundary", f"dirichlet{j + 1}", sections, default="0") for j in range(m))
        if has_dirichlet_data
        else None
    )
    constraint = bnd.get("constraint", "all" if "gamma3" in bnd else "")
    if constraint.strip().lower() == "all":
        mask = tuple(True for _ in range(m))
    else:
        chosen = {int(tok) for tok in constraint.split()}
        if any(c < 1 or c > m for c in chosen):
            raise ProblemFormatError(f"constraint components out of range: {sorted(chosen)}")
        mask = tuple((j + 1) in chosen for j in range(m))

    domain = dict(sections.get("domain", {}))
    solver_options = dict(sections.get("solver", {}))
    t_max = float(solver_options.get("t_end", 1.0))

    spec = ProblemSpec(
        m=m,
        dim=dim,
        nu=nu,
        p=p,
        alpha=alpha,
        B=B,
        K=K,
        e=e,
        F=F,
        g=g,
        u0=u0,
        dirichlet=dirichlet,
        constraint_mask=mask,
        uniqueness_mode=bool(uniq),
        box=box,
        t_max=t_max,
    )
    mesh = _build_mesh(spec, domain, sections, name)
    _check_boundary_use(spec, mesh)
    return LoadedProblem(
        name=name, text=text, spec=spec, mesh=mesh,
        solver_options=solver_options, domain=domain,
    )


def _side_tags(sections, sides):
    bnd = sections.get("boundary", {})
    tag_of = {}
    for gname, tag in msh.TAG_NAMES.items():
        for side in bnd.get(gname, "").split():
            side = side.lower()
            if side not in sides:
                raise ProblemFormatError(f"unknown boundary selector {side!r} in {gname}")
            if side in tag_of:
                raise ProblemFormatError(f"side {side!r} tagged twice")
            tag_of[side] = tag
    missing = [s for s in sides if s not in tag_of]
    if missing:
        raise ProblemFormatError(f"untagged sides: {missing}")
    return tag_of


def _build_mesh(spec, domain, sections, name):
    kind = domain.get("kind", "interval" if spec.dim == 1 else "square")
    if kind == "interval":
        if spec.dim != 1:
            raise ProblemFormatError("interval domain requires dim = 1")
        n = int(domain.get("n", 32))
        tag_of = _side_tags(sections, ("left", "right"))
        return msh.unit_interval_mesh(n, (tag_of["left"], tag_of["right"]))
    if kind == "square":
        if spec.dim != 2:
            raise ProblemFormatError("square domain requires dim = 2")
        nx = int(domain.get("nx", 8))
        ny = int(domain.get("ny", nx))
        tag_of = _side_tags(sections, ("left", "right", "bottom", "top"))
        return msh.unit_square_mesh(nx, ny, tag_of)
    if kind == "file":
        path = domain.get("path")
        if not path:
            raise ProblemFormatError("domain kind 'file' needs path = ...")
        mesh = msh.read_mesh_file(path)
        if mesh.dim != spec.dim:
            raise ProblemFormatError(
                f"mesh file is {mesh.dim}D but the problem declares dim = {spec.dim}"
            )
        return mesh
    raise ProblemFormatError(f"unknown domain kind {kind!r}")


def _is_zero(node):
    return node.kind == "num" and node.value == 0.0


def _check_boundary_use(spec, mesh):
    has_g2 = bool((mesh.facet_tags == int(msh.BoundaryTag.NEUMANN)).any())
    has_g3 = bool((mesh.facet_tags == int(msh.BoundaryTag.UNILATERAL)).any())
    if spec.g is not None and any(not _is_zero(gj) for gj in spec.g) and not has_g2:
        raise ProblemFormatError("problem has Neumann data g but no gamma2 facets")
    if any(spec.constraint_mask) and not has_g3:
        raise ProblemFormatError("problem has constrained components but no gamma3 facets")
    if not (mesh.facet_tags == int(msh.BoundaryTag.DIRICHLET)).any():
        raise ProblemFormatError("at least part of the boundary must be gamma1 (Dirichlet)")


def bundled_path(name):
    """Filesystem path of a bundled problem file (name with or without .prb)."""
    fname = name if name.endswith(".prb") else name + ".prb"
    ref = importlib.resources.files(__package__) / "problems" / fname
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled problem {name!r}")
    return str(ref)


def load_problem(path_or_name):
    """Load a problem file; bare names resolve to bundled problems."""
    import os

    path = str(path_or_name)
    if not os.path.exists(path):
        try:
            path = bundled_path(path)
        except FileNotFoundError:
            raise FileNotFoundError(f"no such problem file: {path_or_name}") from None
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_problem_text(text, name=name)
