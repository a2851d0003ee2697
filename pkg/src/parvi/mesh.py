"""Simplicial meshes on intervals and polygons with tagged boundary parts.

Boundary facets carry one of three tags: Dirichlet (gamma1), Neumann
(gamma2) or the unilateral part (gamma3).  1D facets are single nodes and
are assigned measure 1, so boundary terms reduce to point evaluations.
Meshes are immutable after construction and safe to share.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "BoundaryTag",
    "Mesh",
    "MeshError",
    "unit_interval_mesh",
    "unit_square_mesh",
    "read_mesh_file",
    "boundary_measure",
]


class MeshError(ValueError):
    pass


class BoundaryTag(IntEnum):
    DIRICHLET = 1
    NEUMANN = 2
    UNILATERAL = 3


TAG_NAMES = {
    "gamma1": BoundaryTag.DIRICHLET,
    "gamma2": BoundaryTag.NEUMANN,
    "gamma3": BoundaryTag.UNILATERAL,
}


@dataclass(frozen=True)
class Mesh:
    """P1 mesh: nodes, simplices and tagged boundary facets.

    nodes has shape (n_nodes, dim); elements (n_elems, dim+1);
    facet_nodes (n_facets, dim) with facet_tags from :class:`BoundaryTag`.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    facet_nodes: np.ndarray
    facet_tags: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise MeshError(f"dim must be 1 or 2, got {self.dim}")
        for arr in (self.nodes, self.elements, self.facet_nodes, self.facet_tags):
            arr.setflags(write=False)
        n = len(self.nodes)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError("element node index out of range")
        if self.facet_nodes.size and (
            self.facet_nodes.min() < 0 or self.facet_nodes.max() >= n
        ):
            raise MeshError("facet node index out of range")
        vols = self.element_volumes()
        if np.any(vols <= 0):
            bad = int(np.argmin(vols))
            raise MeshError(f"element {bad} has non-positive volume {vols[bad]}")
        self._check_facets_on_boundary()

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def element_volumes(self):
        """Lengths (1D) or areas (2D), positive for consistent orientation."""
        if self.dim == 1:
            x = self.nodes[:, 0]
            return x[self.elements[:, 1]] - x[self.elements[:, 0]]
        p = self.nodes[self.elements]  # (E, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def facet_measures(self):
        """Facet lengths in 2D; the point convention (measure 1) in 1D."""
        if self.dim == 1:
            return np.ones(len(self.facet_nodes))
        p0 = self.nodes[self.facet_nodes[:, 0]]
        p1 = self.nodes[self.facet_nodes[:, 1]]
        return np.linalg.norm(p1 - p0, axis=1)

    def nodes_with_tag(self, tag):
        mask = self.facet_tags == int(tag)
        return np.unique(self.facet_nodes[mask])

    def facets_with_tag(self, tag):
        mask = self.facet_tags == int(tag)
        return self.facet_nodes[mask]

    def _check_facets_on_boundary(self):
        # Each boundary facet must be a face of exactly one element.
        faces = {}
        for e, elem in enumerate(self.elements):
            if self.dim == 1:
                sub = [(elem[0],), (elem[1],)]
            else:
                sub = [
                    tuple(sorted((elem[0], elem[1]))),
                    tuple(sorted((elem[1], elem[2]))),
                    tuple(sorted((elem[0], elem[2]))),
                ]
            for f in sub:
                faces[f] = faces.get(f, 0) + 1
        for fnodes in self.facet_nodes:
            key = tuple(sorted(int(v) for v in fnodes))
            if faces.get(key, 0) != 1:
                raise MeshError(f"facet {key} is not a boundary face of exactly one element")


def unit_interval_mesh(n, tags=(BoundaryTag.DIRICHLET, BoundaryTag.UNILATERAL)):
    """Uniform mesh of (0,1) with ``n`` elements; endpoints tagged (left, right)."""
    if n < 1:
        raise MeshError("need at least one element")
    nodes = np.linspace(0.0, 1.0, n + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)]).astype(np.int64)
    facet_nodes = np.array([[0], [n]], dtype=np.int64)
    facet_tags = np.array([int(tags[0]), int(tags[1])], dtype=np.int64)
    return Mesh(1, nodes, elements, facet_nodes, facet_tags)


_SIDES = ("left", "right", "bottom", "top")


def unit_square_mesh(nx, ny, tag_map=None):
    """Diagonal triangulation of the unit square, 2 triangles per cell.

    ``tag_map`` maps side names (left/right/bottom/top) to tags; sides left
    out of the map are Dirichlet.  All triangle areas equal 1/(2*nx*ny).
    """
    if nx < 1 or ny < 1:
        raise MeshError("need at least one subdivision per direction")
    tag_map = dict(tag_map or {})
    for side in tag_map:
        if side not in _SIDES:
            raise MeshError(f"unknown side {side!r}")
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    elements = []
    for i in range(nx):
        for j in range(ny):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            elements.append((a, b, c))
            elements.append((a, c, d))
    facet_nodes = []
    facet_tags = []

    def add_side(side, pairs):
        tag = tag_map.get(side, BoundaryTag.DIRICHLET)
        for p in pairs:
            facet_nodes.append(p)
            facet_tags.append(int(tag))

    add_side("left", [(nid(0, j), nid(0, j + 1)) for j in range(ny)])
    add_side("right", [(nid(nx, j), nid(nx, j + 1)) for j in range(ny)])
    add_side("bottom", [(nid(i, 0), nid(i + 1, 0)) for i in range(nx)])
    add_side("top", [(nid(i, ny), nid(i + 1, ny)) for i in range(nx)])
    return Mesh(
        2,
        nodes,
        np.array(elements, dtype=np.int64),
        np.array(facet_nodes, dtype=np.int64),
        np.array(facet_tags, dtype=np.int64),
    )


def boundary_measure(mesh, tag):
    """Total (dim-1)-measure of the boundary part carrying ``tag``."""
    mask = mesh.facet_tags == int(tag)
    if not mask.any():
        warnings.warn(f"no facets tagged {BoundaryTag(int(tag)).name}", stacklevel=2)
        return 0.0
    return float(mesh.facet_measures()[mask].sum())


def read_mesh_file(path):
    """Read the plain-text mesh format.

    Sections NODES (index x [y]), ELEMENTS (node indices) and FACETS
    (node indices followed by a tag name gamma1/gamma2/gamma3), separated
    by the section keyword on its own line.  '#' starts a comment.
    """
    nodes, elements, facet_nodes, facet_tags = [], [], [], []
    section = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            upper = line.upper()
            if upper in ("NODES", "ELEMENTS", "FACETS"):
                section = upper
                continue
            parts = line.split()
            try:
                if section == "NODES":
                    nodes.append([float(v) for v in parts[1:]])
                elif section == "ELEMENTS":
                    elements.append([int(v) for v in parts])
                elif section == "FACETS":
                    facet_nodes.append([int(v) for v in parts[:-1]])
                    facet_tags.append(int(TAG_NAMES[parts[-1].lower()]))
                else:
                    raise MeshError(f"{path}:{lineno}: data before a section header")
            except (ValueError, KeyError) as exc:
                raise MeshError(f"{path}:{lineno}: {exc}") from exc
    if not nodes or not elements:
        raise MeshError(f"{path}: missing NODES or ELEMENTS section")
    nodes = np.asarray(nodes, dtype=float)
    dim = nodes.shape[1]
    return Mesh(
        dim,
        nodes,
        np.asarray(elements, dtype=np.int64),
        np.asarray(facet_nodes, dtype=np.int64).reshape(-1, dim),
        np.asarray(facet_tags, dtype=np.int64),
    )
