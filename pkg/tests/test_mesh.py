import numpy as np
import pytest

from parvi.mesh import (
    BoundaryTag,
    Mesh,
    MeshError,
    boundary_measure,
    read_mesh_file,
    unit_interval_mesh,
    unit_square_mesh,
)

D, N, U = BoundaryTag.DIRICHLET, BoundaryTag.NEUMANN, BoundaryTag.UNILATERAL


def test_interval_mesh_basic():
    mesh = unit_interval_mesh(4, (D, U))
    assert mesh.n_nodes == 5
    assert mesh.elements.tolist() == [[0, 1], [1, 2], [2, 3], [3, 4]]
    assert np.allclose(mesh.nodes[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
    assert mesh.facet_tags.tolist() == [int(D), int(U)]
    assert mesh.nodes_with_tag(U).tolist() == [4]


def test_interval_single_element():
    mesh = unit_interval_mesh(1)
    assert mesh.n_nodes == 2
    assert mesh.n_elements == 1


def test_interval_zero_elements_rejected():
    with pytest.raises(MeshError):
        unit_interval_mesh(0)


def test_square_one_cell():
    mesh = unit_square_mesh(1, 1, {"top": U})
    assert mesh.n_nodes == 4
    assert mesh.n_elements == 2
    assert np.allclose(mesh.element_volumes(), 0.5)


def test_square_2x2():
    mesh = unit_square_mesh(2, 2, {"left": D, "right": N, "top": U, "bottom": N})
    assert mesh.n_nodes == 9
    assert mesh.n_elements == 8
    assert len(mesh.facet_nodes) == 8
    assert np.allclose(mesh.element_volumes(), 1.0 / 8.0)


@pytest.mark.parametrize("nx,ny", [(1, 1), (3, 2), (5, 7)])
def test_square_area_partition(nx, ny):
    mesh = unit_square_mesh(nx, ny)
    assert mesh.element_volumes().sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(mesh.element_volumes(), 1.0 / (2 * nx * ny))


def test_interval_volume_partition():
    for n in (1, 7, 32):
        mesh = unit_interval_mesh(n)
        assert mesh.element_volumes().sum() == pytest.approx(1.0, abs=1e-12)


def test_refinement_nests_nodes():
    coarse = unit_interval_mesh(8)
    fine = unit_interval_mesh(16)
    for x in coarse.nodes[:, 0]:
        assert np.any(np.isclose(fine.nodes[:, 0], x, atol=1e-14))
    c2 = unit_square_mesh(2, 2)
    f2 = unit_square_mesh(4, 4)
    for p in c2.nodes:
        assert np.any(np.all(np.isclose(f2.nodes, p, atol=1e-14), axis=1))


def test_boundary_measure():
    mesh = unit_square_mesh(4, 4, {"top": U, "left": D, "right": N, "bottom": N})
    assert boundary_measure(mesh, U) == pytest.approx(1.0)
    assert boundary_measure(mesh, N) == pytest.approx(2.0)
    interval = unit_interval_mesh(8, (D, U))
    assert boundary_measure(interval, U) == pytest.approx(1.0)
    with pytest.warns(UserWarning):
        assert boundary_measure(interval, N) == 0.0


def test_negative_volume_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    flipped = np.array([[0, 2, 1]], dtype=np.int64)
    with pytest.raises(MeshError, match="volume"):
        Mesh(2, nodes, flipped, np.empty((0, 2), dtype=np.int64),
             np.empty((0,), dtype=np.int64))


def test_facet_must_lie_on_boundary():
    nodes = np.linspace(0, 1, 4).reshape(-1, 1)
    elems = np.array([[0, 1], [1, 2], [2, 3]], dtype=np.int64)
    with pytest.raises(MeshError, match="boundary"):
        Mesh(1, nodes, elems, np.array([[1]], dtype=np.int64),
             np.array([int(U)], dtype=np.int64))


def test_index_out_of_range_rejected():
    nodes = np.linspace(0, 1, 3).reshape(-1, 1)
    with pytest.raises(MeshError, match="range"):
        Mesh(1, nodes, np.array([[0, 5]], dtype=np.int64),
             np.empty((0, 1), dtype=np.int64), np.empty((0,), dtype=np.int64))


def test_mesh_file_round_trip(tmp_path):
    path = tmp_path / "tri.msh"
    path.write_text(
        """# two triangles
NODES
0 0.0 0.0
1 1.0 0.0
2 1.0 1.0
3 0.0 1.0
ELEMENTS
0 1 2
0 2 3
FACETS
0 1 gamma2
1 2 gamma3
2 3 gamma1
3 0 gamma1
"""
    )
    mesh = read_mesh_file(path)
    assert mesh.dim == 2
    assert mesh.n_nodes == 4
    assert mesh.n_elements == 2
    assert boundary_measure(mesh, U) == pytest.approx(1.0)
    assert sorted(mesh.nodes_with_tag(D).tolist()) == [0, 2, 3]


def test_mesh_file_bad_tag(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text("NODES\n0 0.0\n1 1.0\nELEMENTS\n0 1\nFACETS\n0 gamma9\n")
    with pytest.raises(MeshError):
        read_mesh_file(path)
