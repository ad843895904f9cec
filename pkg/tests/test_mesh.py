from __future__ import annotations

import math

import numpy as np
import pytest

from strainlim.mesh import (
    DIRICHLET_ALL,
    Mesh,
    MeshError,
    checkerboard_partition,
    crack_mesh,
    mesh_metrics,
    read_mesh_text,
    read_vtk,
    rectangle_mesh,
    refine,
    split_triangles,
    uniform_square_mesh,
    vtk_string,
    write_mesh_text,
    write_vtk,
)


def interior_edge_counts(mesh):
    e = np.sort(np.stack([mesh.cells, np.roll(mesh.cells, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def test_uniform_counts():
    m = uniform_square_mesh(4)
    assert (m.n_cells, m.n_nodes) == (16, 25)
    assert len(uniform_square_mesh(2).boundary_edges) == 8
    assert set(m.edge_tags) == {DIRICHLET_ALL}
    m.validate()


def test_uniform_128_diameters():
    met = mesh_metrics(uniform_square_mesh(128))
    assert met["h_max"] == pytest.approx(math.sqrt(2.0) / 128, rel=1e-12)
    assert met["h_min"] == pytest.approx(met["h_max"], rel=1e-12)
    assert met["eta_max"] == pytest.approx(math.sqrt(2.0), rel=1e-12)


def test_bad_sizes():
    with pytest.raises(MeshError):
        uniform_square_mesh(0)
    with pytest.raises(MeshError):
        checkerboard_partition(0)
    with pytest.raises(MeshError):
        crack_mesh(-1)


def test_checkerboard_partition():
    assert checkerboard_partition(1).n_cells == 4
    m3 = checkerboard_partition(3)
    assert mesh_metrics(m3)["h_max"] == pytest.approx(math.sqrt(2.0) / 4)
    m7 = checkerboard_partition(7)
    assert m7.n_cells == 64
    assert m7.interior_node_grid().size == 49
    idx = m7.interior_node_grid()
    np.testing.assert_allclose(m7.nodes[idx[0, 0]], [1 / 8, 1 / 8])
    np.testing.assert_allclose(m7.nodes[idx[2, 5]], [3 / 8, 6 / 8])


def test_single_cell_metrics():
    met = mesh_metrics(uniform_square_mesh(1))
    assert met["h_max"] == pytest.approx(math.sqrt(2.0))
    assert mesh_metrics(uniform_square_mesh(4))["h_min"] == mesh_metrics(uniform_square_mesh(4))["h_max"]


def test_refinement_halves_sizes():
    m = uniform_square_mesh(3)
    a, b = mesh_metrics(m), mesh_metrics(refine(m))
    assert b["h_max"] == pytest.approx(a["h_max"] / 2, rel=1e-14)
    assert b["h_min"] == pytest.approx(a["h_min"] / 2, rel=1e-14)
    t = split_triangles(m)
    c, d = mesh_metrics(t), mesh_metrics(refine(t))
    assert d["h_max"] == pytest.approx(c["h_max"] / 2, rel=1e-14)
    refine(t).validate()


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_crack_mesh_structure(level):
    m = crack_mesh(level)
    m.validate()
    assert m.n_cells == 4 * 4**level
    assert set(m.edge_tags) == {"I", "II", "III", "IV"}
    assert np.all(interior_edge_counts(m) <= 2)
    # notch tip stays a node
    assert np.any(np.all(np.isclose(m.nodes, [0.5, 1.0]), axis=1))
    for tag, check in {
        "I": lambda p: np.isclose(p[:, 0], 0.0),
        "II": lambda p: np.isclose(np.abs(p[:, 1] - 1.0), 0.5 - p[:, 0]),
        "III": lambda p: np.isclose(p[:, 0], 1.0),
        "IV": lambda p: np.isclose(p[:, 1], 0.0) | np.isclose(p[:, 1], 2.0),
    }.items():
        pts = m.nodes[m.tagged_edges(tag).ravel()]
        assert np.all(check(pts)), tag
    # total boundary length: 2 + 2 + 2 * 0.5 + 2 * sqrt(1/2)
    e = m.nodes[m.boundary_edges]
    assert np.linalg.norm(e[:, 1] - e[:, 0], axis=1).sum() == pytest.approx(5.0 + math.sqrt(2.0))
    assert m.cell_areas().sum() == pytest.approx(2.0 - 0.25)


def test_crack_target_level():
    m = crack_mesh(6)
    assert m.n_cells == 16384
    assert mesh_metrics(m)["h_min"] == pytest.approx(0.011, rel=0.10)


def test_tags_inherited_by_children():
    coarse = crack_mesh(1)
    fine = refine(coarse)
    for tag in ("I", "II", "III", "IV"):
        assert len(fine.tagged_edges(tag)) == 2 * len(coarse.tagged_edges(tag))
        fine_len = np.linalg.norm(np.diff(fine.nodes[fine.tagged_edges(tag)], axis=1), axis=-1).sum()
        coarse_len = np.linalg.norm(np.diff(coarse.nodes[coarse.tagged_edges(tag)], axis=1), axis=-1).sum()
        assert fine_len == pytest.approx(coarse_len)


def test_validate_catches_problems():
    m = uniform_square_mesh(2)
    flipped = Mesh(m.nodes, m.cells[:, ::-1], "quad", m.boundary_edges, m.edge_tags)
    with pytest.raises(MeshError):
        flipped.validate()
    untagged = Mesh(m.nodes, m.cells, "quad", m.boundary_edges[:-1], m.edge_tags[:-1])
    with pytest.raises(MeshError):
        untagged.validate()
    with pytest.raises(MeshError):
        Mesh(m.nodes, m.cells, "hexagon", m.boundary_edges, m.edge_tags)


def test_vtk_geometry_only(tmp_path):
    m = uniform_square_mesh(2)
    text = vtk_string(m)
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert "POINT_DATA" not in text and "CELL_DATA" not in text
    assert "CELLS 4 20" in text


def test_vtk_roundtrip_byte_identical(tmp_path):
    m = crack_mesh(2)
    rng = np.random.default_rng(1)
    u = rng.normal(size=(m.n_nodes, 2))
    first = tmp_path / "a.vtk"
    write_vtk(first, m, point_data={"u": u, "u_mag": np.linalg.norm(u, axis=1)},
              cell_data={"T": rng.normal(size=(m.n_cells, 3)), "id": np.arange(m.n_cells, dtype=float)})
    assert "SCALARS u_mag double 1" in first.read_text()
    mesh2, pd, cd, title = read_vtk(first)
    np.testing.assert_array_equal(pd["u"][:, :2], u)
    second = tmp_path / "b.vtk"
    write_vtk(second, mesh2, point_data=pd, cell_data=cd, title=title)
    assert first.read_bytes() == second.read_bytes()
    third = tmp_path / "c.vtk"
    write_vtk(third, m, point_data={"u": u, "u_mag": np.linalg.norm(u, axis=1)},
              cell_data={"T": cd["T"], "id": cd["id"]})
    assert third.read_bytes() == first.read_bytes()


def test_vtk_field_length_checked(tmp_path):
    m = uniform_square_mesh(2)
    with pytest.raises(MeshError):
        write_vtk(tmp_path / "x.vtk", m, point_data={"bad": np.zeros(3)})
    with pytest.raises(MeshError):
        write_vtk(tmp_path / "x.vtk", m, cell_data={"bad": np.zeros((4, 5))})


def test_text_mesh_roundtrip(tmp_path):
    m = split_triangles(crack_mesh(1))
    path = tmp_path / "m.txt"
    write_mesh_text(path, m)
    back = read_mesh_text(path)
    np.testing.assert_array_equal(back.nodes, m.nodes)
    np.testing.assert_array_equal(back.cells, m.cells)
    np.testing.assert_array_equal(back.boundary_edges, m.boundary_edges)
    assert list(back.edge_tags) == list(m.edge_tags)
    assert back.kind == "triangle"
    back.validate()


def test_rectangle_numbering():
    m = rectangle_mesh(3, 2, 0.0, 3.0, 0.0, 2.0)
    assert m.grid_shape == (3, 2)
    np.testing.assert_allclose(m.nodes[1 * 4 + 2], [2.0, 1.0])
    np.testing.assert_allclose(m.cell_areas(), 1.0)
