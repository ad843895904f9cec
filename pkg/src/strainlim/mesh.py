"""Structured 2D meshes, boundary tags, shape metrics and mesh/field files."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

DIRICHLET_ALL = "DIRICHLET_ALL"
TAGS = ("I", "II", "III", "IV", DIRICHLET_ALL)

_VTK_CELL_TYPE = {"quad": 9, "triangle": 5}


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    """Conforming quadrilateral or triangular mesh.

    ``cells`` are counterclockwise. ``boundary_edges[k]`` carries the tag
    ``edge_tags[k]``. ``grid_shape = (nx, ny)`` is set for Cartesian meshes, in
    which case node ``(i, j)`` has index ``j * (nx + 1) + i``.
    """

    nodes: np.ndarray
    cells: np.ndarray
    kind: str
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    grid_shape: Optional[tuple[int, int]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.edge_tags = np.asarray(self.edge_tags, dtype=object)
        if self.kind not in _VTK_CELL_TYPE:
            raise MeshError(f"unknown cell kind {self.kind!r}")
        if self.cells.shape[1] != (4 if self.kind == "quad" else 3):
            raise MeshError("connectivity width does not match cell kind")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def tagged_edges(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.edge_tags == tag]

    def tagged_nodes(self, tags) -> np.ndarray:
        if isinstance(tags, str):
            tags = [tags]
        mask = np.isin(self.edge_tags, list(tags))
        return np.unique(self.boundary_edges[mask])

    def cell_areas(self) -> np.ndarray:
        x = self.nodes[self.cells]
        xs, ys = x[..., 0], x[..., 1]
        return 0.5 * np.sum(xs * np.roll(ys, -1, axis=1) - np.roll(xs, -1, axis=1) * ys, axis=1)

    def corner_jacobians(self) -> np.ndarray:
        """Jacobian of the bilinear (or affine) cell map at every corner."""
        x = self.nodes[self.cells]
        e_next = np.roll(x, -1, axis=1) - x
        e_prev = np.roll(x, 1, axis=1) - x
        return e_next[..., 0] * e_prev[..., 1] - e_next[..., 1] * e_prev[..., 0]

    def interior_node_grid(self) -> np.ndarray:
        """Indices ``[i-1, j-1]`` of interior nodes of a Cartesian mesh."""
        if self.grid_shape is None:
            raise MeshError("mesh has no Cartesian numbering")
        nx, ny = self.grid_shape
        i, j = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="ij")
        return j * (nx + 1) + i

    def validate(self) -> None:
        if np.any(self.cell_areas() <= 0.0) or np.any(self.corner_jacobians() <= 0.0):
            raise MeshError("cell with non-positive area or corner Jacobian")
        edges, counts = _edge_counts(self.cells)
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two cells")
        bnd = {tuple(e) for e in edges[counts == 1]}
        tagged = [tuple(sorted(e)) for e in self.boundary_edges]
        if len(tagged) != len(set(tagged)) or set(tagged) != bnd:
            raise MeshError("boundary edges and tags do not match the cell boundary")


def _cell_edges(cells: np.ndarray) -> np.ndarray:
    k = cells.shape[1]
    return np.stack([cells, np.roll(cells, -1, axis=1)], axis=-1).reshape(-1, 2) if k else cells


def _edge_counts(cells: np.ndarray):
    e = np.sort(_cell_edges(cells), axis=1)
    return np.unique(e, axis=0, return_counts=True)


def rectangle_mesh(nx: int, ny: int, x0=0.0, x1=1.0, y0=0.0, y1=1.0, tag: str = DIRICHLET_ALL) -> Mesh:
    if nx < 1 or ny < 1:
        raise MeshError("need at least one cell per direction")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    cells = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    bottom = np.column_stack([np.arange(nx), np.arange(1, nx + 1)])
    right = np.column_stack([np.arange(ny) * (nx + 1) + nx, np.arange(1, ny + 1) * (nx + 1) + nx])
    top = np.column_stack([ny * (nx + 1) + np.arange(nx, 0, -1), ny * (nx + 1) + np.arange(nx - 1, -1, -1)])
    left = np.column_stack([np.arange(ny, 0, -1) * (nx + 1), np.arange(ny - 1, -1, -1) * (nx + 1)])
    edges = np.vstack([bottom, right, top, left])
    return Mesh(nodes, cells, "quad", edges, np.full(len(edges), tag, dtype=object), grid_shape=(nx, ny))


def uniform_square_mesh(N: int) -> Mesh:
    """N x N congruent squares on the unit square, every boundary edge Dirichlet."""
    if N < 1:
        raise MeshError("N must be >= 1")
    return rectangle_mesh(N, N)


def checkerboard_partition(N: int) -> Mesh:
    """(N+1) x (N+1) squares of side h = 1/(N+1) with Cartesian numbering."""
    if N < 1:
        raise MeshError("N must be >= 1")
    return rectangle_mesh(N + 1, N + 1)


def refine(mesh: Mesh) -> Mesh:
    """Uniform refinement: quadrisection of quads, red refinement of triangles.

    Boundary edges are split in two and both halves keep the parent tag.
    """
    nodes, cells = mesh.nodes, mesh.cells
    nn, nc, k = len(nodes), len(cells), cells.shape[1]
    all_edges = np.sort(_cell_edges(cells), axis=1)
    uniq, inv = np.unique(all_edges, axis=0, return_inverse=True)
    inv = inv.reshape(nc, k)
    mid_ids = nn + np.arange(len(uniq))
    mids = 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])
    m = mid_ids[inv]  # m[:, e] is the midpoint of edge (v_e, v_{e+1})
    if mesh.kind == "quad":
        centre_ids = nn + len(uniq) + np.arange(nc)
        centres = nodes[cells].mean(axis=1)
        new_nodes = np.vstack([nodes, mids, centres])
        a, b, c, d = cells.T
        o = centre_ids
        children = np.stack(
            [
                np.column_stack([a, m[:, 0], o, m[:, 3]]),
                np.column_stack([m[:, 0], b, m[:, 1], o]),
                np.column_stack([o, m[:, 1], c, m[:, 2]]),
                np.column_stack([m[:, 3], o, m[:, 2], d]),
            ],
            axis=1,
        ).reshape(-1, 4)
    else:
        new_nodes = np.vstack([nodes, mids])
        a, b, c = cells.T
        children = np.stack(
            [
                np.column_stack([a, m[:, 0], m[:, 2]]),
                np.column_stack([m[:, 0], b, m[:, 1]]),
                np.column_stack([m[:, 2], m[:, 1], c]),
                np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
            ],
            axis=1,
        ).reshape(-1, 3)
    lookup = {tuple(e): i for i, e in enumerate(uniq)}
    be = mesh.boundary_edges
    bmid = np.array([mid_ids[lookup[tuple(sorted(e))]] for e in be], dtype=np.int64)
    new_edges = np.stack([np.column_stack([be[:, 0], bmid]), np.column_stack([bmid, be[:, 1]])], axis=1).reshape(-1, 2)
    new_tags = np.repeat(mesh.edge_tags, 2)
    meta = dict(mesh.meta)
    meta["level"] = meta.get("level", 0) + 1
    return Mesh(new_nodes, children, mesh.kind, new_edges, new_tags, grid_shape=None, meta=meta)


def crack_base_mesh() -> Mesh:
    """Four-quad decomposition of (0,1)x(0,2) minus the notch (0,1/2), (1/2,1), (0,3/2)."""
    nodes = np.array(
        [
            [0.0, 0.0], [0.5, 0.0], [1.0, 0.0],
            [0.0, 0.5], [0.5, 1.0], [1.0, 1.0],
            [0.0, 1.5], [0.5, 2.0], [1.0, 2.0], [0.0, 2.0],
        ]
    )
    cells = np.array([[0, 1, 4, 3], [1, 2, 5, 4], [6, 4, 7, 9], [4, 5, 8, 7]])
    edges = np.array([[0, 1], [1, 2], [2, 5], [5, 8], [8, 7], [7, 9], [9, 6], [6, 4], [4, 3], [3, 0]])
    tags = ["IV", "IV", "III", "III", "IV", "IV", "I", "II", "II", "I"]
    return Mesh(nodes, cells, "quad", edges, np.array(tags, dtype=object), meta={"level": 0})


def crack_mesh(refine_levels: int) -> Mesh:
    """Notched rectangle refined ``refine_levels`` times (4 * 4**L cells).

    Tags: I on x = 0, II on the notch faces, III on x = 1, IV on y = 0 and y = 2.
    """
    if refine_levels < 0:
        raise MeshError("refine_levels must be >= 0")
    m = crack_base_mesh()
    for _ in range(refine_levels):
        m = refine(m)
    return m


def split_triangles(mesh: Mesh) -> Mesh:
    """Split every quad along its (v0, v2) diagonal."""
    if mesh.kind != "quad":
        raise MeshError("expected a quadrilateral mesh")
    c = mesh.cells
    tris = np.stack([c[:, [0, 1, 2]], c[:, [0, 2, 3]]], axis=1).reshape(-1, 3)
    return Mesh(mesh.nodes.copy(), tris, "triangle", mesh.boundary_edges.copy(), mesh.edge_tags.copy(),
                grid_shape=mesh.grid_shape, meta=dict(mesh.meta))


def _inscribed_diameters(x: np.ndarray) -> np.ndarray:
    """Diameter of the largest inscribed disc of convex polygons ``x`` (nc, k, 2)."""
    nc, k, _ = x.shape
    e = np.roll(x, -1, axis=1) - x
    length = np.linalg.norm(e, axis=-1)
    normal = np.stack([-e[..., 1], e[..., 0]], axis=-1) / length[..., None]  # inward for ccw
    offset = np.einsum("cki,cki->ck", normal, x)
    if k == 3:
        area = 0.5 * np.abs(e[:, 0, 0] * e[:, 2, 1] - e[:, 0, 1] * e[:, 2, 0])
        return 4.0 * area / length.sum(axis=1)
    best = np.zeros(nc)
    for skip in range(k):
        idx = [i for i in range(k) if i != skip]
        A = np.concatenate([normal[:, idx], -np.ones((nc, 3, 1))], axis=-1)
        rhs = offset[:, idx]
        ok = np.abs(np.linalg.det(A)) > 1e-14
        sol = np.zeros((nc, 3))
        sol[ok] = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
        centre, r = sol[:, :2], sol[:, 2]
        dist_all = np.einsum("cki,ci->ck", normal, centre) - offset
        feasible = ok & (r > 0) & np.all(dist_all >= r[:, None] * (1 - 1e-12), axis=1)
        best = np.where(feasible, np.maximum(best, r), best)
    return 2.0 * best


def cell_diameters(mesh: Mesh) -> np.ndarray:
    x = mesh.nodes[mesh.cells]
    d = np.linalg.norm(x[:, :, None, :] - x[:, None, :, :], axis=-1)
    return d.max(axis=(1, 2))


def mesh_metrics(mesh: Mesh) -> dict[str, float]:
    """Global max/min cell diameter and the largest shape ratio h_K / rho_K."""
    if np.any(mesh.cell_areas() <= 0.0):
        raise MeshError("degenerate cell")
    h = cell_diameters(mesh)
    rho = _inscribed_diameters(mesh.nodes[mesh.cells])
    if np.any(rho <= 0.0):
        raise MeshError("degenerate cell")
    return {"h_max": float(h.max()), "h_min": float(h.min()), "eta_max": float((h / rho).max())}


# ---------------------------------------------------------------- file output

def _fmt(v: float) -> str:
    return repr(float(v))


def _field_block(name: str, values: np.ndarray, count: int) -> list[str]:
    a = np.asarray(values, dtype=float)
    if a.shape[0] != count:
        raise MeshError(f"field {name!r} has {a.shape[0]} entries, expected {count}")
    if a.ndim == 1:
        lines = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in a]
        return lines
    if a.shape[1] in (2, 3):
        # VTK vectors are 3D; planar fields get a zero z component
        if a.shape[1] == 2:
            a = np.column_stack([a, np.zeros(len(a))])
        return [f"VECTORS {name} double"] + [" ".join(_fmt(v) for v in row) for row in a]
    if a.shape[1] != 4:
        raise MeshError("fields need 1 to 4 components")
    lines = [f"SCALARS {name} double {a.shape[1]}", "LOOKUP_TABLE default"]
    return lines + [" ".join(_fmt(v) for v in row) for row in a]


def vtk_string(mesh: Mesh, point_data: Optional[Mapping] = None, cell_data: Optional[Mapping] = None,
               title: str = "strainlim") -> str:
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in mesh.nodes]
    k = mesh.cells.shape[1]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}")
    lines += [f"{k} " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(_VTK_CELL_TYPE[mesh.kind])] * mesh.n_cells
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, vals in point_data.items():
            lines += _field_block(name, vals, mesh.n_nodes)
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_cells}")
        for name, vals in cell_data.items():
            lines += _field_block(name, vals, mesh.n_cells)
    return "\n".join(lines) + "\n"


def write_vtk(path, mesh: Mesh, point_data: Optional[Mapping] = None, cell_data: Optional[Mapping] = None,
              title: str = "strainlim") -> None:
    """Write a legacy ASCII unstructured-grid file (byte-deterministic)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(vtk_string(mesh, point_data, cell_data, title))


def read_vtk(path):
    """Read a file produced by :func:`write_vtk`.

    Returns ``(mesh, point_data, cell_data, title)``. Boundary tags are not
    stored in VTK files, so the mesh carries boundary edges tagged ``""``.
    """
    with open(path, encoding="ascii") as fh:
        toks = fh.read().split("\n")
    title = toks[1]
    pos = 4
    words = toks[pos].split()
    npts = int(words[1])
    pts = np.array([[float(v) for v in toks[pos + 1 + i].split()] for i in range(npts)])
    pos += 1 + npts
    nc = int(toks[pos].split()[1])
    cells = [[int(v) for v in toks[pos + 1 + i].split()[1:]] for i in range(nc)]
    pos += 1 + nc
    types = {int(toks[pos + 1 + i]) for i in range(nc)}
    pos += 1 + nc
    kind = "quad" if types == {9} else "triangle"
    cells = np.array(cells, dtype=np.int64)
    edges, counts = _edge_counts(cells)
    mesh = Mesh(pts[:, :2], cells, kind, edges[counts == 1], np.full((counts == 1).sum(), "", dtype=object))
    point_data, cell_data = {}, {}
    target, count = None, 0
    while pos < len(toks) and toks[pos]:
        words = toks[pos].split()
        if words[0] == "POINT_DATA":
            target, count = point_data, int(words[1])
            pos += 1
        elif words[0] == "CELL_DATA":
            target, count = cell_data, int(words[1])
            pos += 1
        elif words[0] == "SCALARS":
            ncomp = int(words[3])
            rows = [[float(v) for v in toks[pos + 2 + i].split()] for i in range(count)]
            arr = np.array(rows)
            target[words[1]] = arr[:, 0] if ncomp == 1 else arr
            pos += 2 + count
        elif words[0] == "VECTORS":
            arr = np.array([[float(v) for v in toks[pos + 1 + i].split()] for i in range(count)])
            target[words[1]] = arr
            pos += 1 + count
        else:
            raise MeshError(f"unexpected VTK section {words[0]!r}")
    return mesh, point_data, cell_data, title


def write_mesh_text(path, mesh: Mesh) -> None:
    """Plain-text mesh: header with counts, coordinates, connectivity, tagged edges."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{mesh.kind} {mesh.n_nodes} {mesh.n_cells} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{_fmt(x)} {_fmt(y)}\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")
        for (a, b), t in zip(mesh.boundary_edges, mesh.edge_tags):
            fh.write(f"{int(a)} {int(b)} {t}\n")


def read_mesh_text(path) -> Mesh:
    with open(path, encoding="ascii") as fh:
        kind, nn, nc, ne = fh.readline().split()
        nn, nc, ne = int(nn), int(nc), int(ne)
        nodes = np.array([[float(v) for v in fh.readline().split()] for _ in range(nn)])
        cells = np.array([[int(v) for v in fh.readline().split()] for _ in range(nc)], dtype=np.int64)
        edges, tags = [], []
        for _ in range(ne):
            a, b, t = fh.readline().split()
            edges.append((int(a), int(b)))
            tags.append(t)
    return Mesh(nodes, cells, kind, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(tags, dtype=object))
