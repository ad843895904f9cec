"""Finite element spaces, quadrature and assembly for the mixed stress/displacement pair.

Displacements are continuous Q1 (P1 on triangles) with interleaved dofs
``2 * node + component``. Stresses are discontinuous: one constant per cell
(Q0/P0) or one bilinear polynomial per cell (Q1disc). A stress dof is
``(cell * nsb + local_basis) * 3 + component`` with components ``(xx, yy, xy)``;
the basis tensor of the xy component has both off-diagonal entries equal to 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET_ALL, Mesh
from .tensor import contraction_weights

STRESS_KINDS = ("P0", "Q0", "Q1disc")
_W = contraction_weights(2)


def gauss_1d(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def reference_rule(kind: str, npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit square, or its collapsed version on the unit triangle."""
    x, w = gauss_1d(npts)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    if kind == "quad":
        return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()
    if kind == "triangle":
        pts = np.column_stack([X.ravel(), (Y * (1.0 - X)).ravel()])
        return pts, (W * (1.0 - X)).ravel()
    raise ValueError(f"unknown cell kind {kind!r}")


def shape_functions(kind: str, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(nq, nb)`` and reference gradients ``(nq, nb, 2)`` of Q1 or P1 bases."""
    xi, eta = pts[:, 0], pts[:, 1]
    if kind == "quad":
        N = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
        dN = np.stack(
            [
                np.column_stack([-(1 - eta), -(1 - xi)]),
                np.column_stack([1 - eta, -xi]),
                np.column_stack([eta, xi]),
                np.column_stack([-eta, 1 - xi]),
            ],
            axis=1,
        )
        return N, dN
    N = np.column_stack([1 - xi - eta, xi, eta])
    dN = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2)).copy()
    return N, dN


@dataclass
class CellQuadrature:
    """Quadrature data on every cell: points, weights times Jacobian, shape values and gradients."""

    points: np.ndarray  # (nc, nq, 2)
    wdet: np.ndarray  # (nc, nq)
    N: np.ndarray  # (nq, nb)
    grad: np.ndarray  # (nc, nq, nb, 2)
    ref: np.ndarray  # (nq, 2) reference coordinates

    @classmethod
    def build(cls, mesh: Mesh, npts: int) -> CellQuadrature:
        ref, w = reference_rule(mesh.kind, npts)
        N, dN = shape_functions(mesh.kind, ref)
        X = mesh.nodes[mesh.cells]
        pts = np.einsum("qa,cai->cqi", N, X)
        J = np.einsum("cai,qaj->cqij", X, dN)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0.0):
            raise ValueError("non-positive Jacobian at a quadrature point")
        inv = np.empty_like(J)
        inv[..., 0, 0] = J[..., 1, 1] / det
        inv[..., 1, 1] = J[..., 0, 0] / det
        inv[..., 0, 1] = -J[..., 0, 1] / det
        inv[..., 1, 0] = -J[..., 1, 0] / det
        grad = np.einsum("qaj,cqji->cqai", dN, inv)
        return cls(pts, w[None, :] * det, N, grad, ref)

    def strain_basis(self) -> np.ndarray:
        """Strain components of each displacement basis function, ``(nc, nq, nb, 2, 3)``."""
        g = self.grad
        eps = np.zeros(g.shape[:3] + (2, 3))
        eps[..., 0, 0] = g[..., 0]
        eps[..., 0, 2] = 0.5 * g[..., 1]
        eps[..., 1, 1] = g[..., 1]
        eps[..., 1, 2] = 0.5 * g[..., 0]
        return eps


def _as_vector_field(fn, x, y, ncomp) -> np.ndarray:
    val = np.asarray(fn(x, y), dtype=float)
    return np.broadcast_to(val, x.shape + (ncomp,))


@dataclass
class FunctionSpaces:
    """Discrete stress and displacement spaces on a mesh, with Dirichlet data."""

    mesh: Mesh
    stress_kind: str = "Q0"
    dirichlet_tags: Sequence[str] = (DIRICHLET_ALL,)
    quad_order: int = 3
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.stress_kind not in STRESS_KINDS:
            raise ValueError(f"stress space must be one of {STRESS_KINDS}")
        if self.stress_kind == "P0" and self.mesh.kind != "triangle":
            raise ValueError("P0 stress needs a triangular mesh")
        if self.stress_kind in ("Q0", "Q1disc") and self.mesh.kind != "quad":
            raise ValueError(f"{self.stress_kind} stress needs a quadrilateral mesh")
        dn = self.mesh.tagged_nodes(self.dirichlet_tags)
        self.dirichlet_dofs = np.sort(np.concatenate([2 * dn, 2 * dn + 1]))
        mask = np.ones(self.n_disp, dtype=bool)
        mask[self.dirichlet_dofs] = False
        self.free_dofs = np.flatnonzero(mask)

    @property
    def nsb(self) -> int:
        """Stress basis functions per cell and component."""
        return 4 if self.stress_kind == "Q1disc" else 1

    @property
    def piecewise_constant(self) -> bool:
        return self.nsb == 1

    @property
    def n_stress(self) -> int:
        return self.mesh.n_cells * self.nsb * 3

    @property
    def n_disp(self) -> int:
        return 2 * self.mesh.n_nodes

    def quadrature(self, npts: Optional[int] = None) -> CellQuadrature:
        npts = self.quad_order if npts is None else npts
        key = ("quad", npts)
        if key not in self._cache:
            self._cache[key] = CellQuadrature.build(self.mesh, npts)
        return self._cache[key]

    @property
    def assembly_order(self) -> int:
        """Gauss points per direction for mass, coupling and source.

        Q1disc uses the 2x2 rule. Its mass and coupling integrands are at most
        cubic per reference direction on any quadrilateral, so both are exact,
        and the mass matrix is diagonal in the Gauss-point Lagrange basis.
        """
        return 2 if self.stress_kind == "Q1disc" else self.quad_order

    def assembly_quadrature(self) -> CellQuadrature:
        return self.quadrature(self.assembly_order)

    def stress_basis_values(self, q: CellQuadrature) -> np.ndarray:
        """Stress shape functions at the reference points of ``q``, ``(nq, nsb)``.

        The Q1disc basis is the Lagrange basis at the 2x2 Gauss points, local
        index ``2 * i + j`` for the point ``(g_i, g_j)``.
        """
        if self.nsb == 1:
            return np.ones((q.ref.shape[0], 1))
        g = gauss_1d(2)[0]

        def lag(x):
            return np.stack([(g[1] - x) / (g[1] - g[0]), (x - g[0]) / (g[1] - g[0])], axis=-1)

        lx, ly = lag(q.ref[:, 0]), lag(q.ref[:, 1])
        return np.einsum("qi,qj->qij", lx, ly).reshape(-1, 4)

    def disp_dofs(self) -> np.ndarray:
        """Global displacement dofs of each cell, ``(nc, nb, 2)``."""
        c = self.mesh.cells
        return np.stack([2 * c, 2 * c + 1], axis=-1)

    def cell_areas(self) -> np.ndarray:
        return self.quadrature().wdet.sum(axis=1)

    def interpolate(self, g: Callable) -> np.ndarray:
        """Nodal interpolant of a vector field ``g(x, y) -> (..., 2)``."""
        x, y = self.mesh.nodes[:, 0], self.mesh.nodes[:, 1]
        return _as_vector_field(g, x, y, 2).reshape(-1).copy()

    def dirichlet_lift(self, g: Optional[Callable]) -> np.ndarray:
        """Displacement vector equal to the interpolant of ``g`` on Dirichlet dofs, zero elsewhere."""
        u = np.zeros(self.n_disp)
        if g is not None:
            u[self.dirichlet_dofs] = self.interpolate(g)[self.dirichlet_dofs]
        return u


def assemble_coupling(spaces: FunctionSpaces) -> sp.csr_matrix:
    """B[i, j] = integral of (stress basis i) : eps(displacement basis j)."""
    q = spaces.assembly_quadrature()
    eps = q.strain_basis()
    phi = spaces.stress_basis_values(q)
    loc = np.einsum("cq,qb,cqaki,i->cbiak", q.wdet, phi, eps, _W)
    nc, nsb = loc.shape[0], loc.shape[1]
    rows = (np.arange(nc)[:, None, None] * nsb + np.arange(nsb)[None, :, None]) * 3 + np.arange(3)[None, None, :]
    cols = spaces.disp_dofs()
    R = np.broadcast_to(rows[:, :, :, None, None], loc.shape)
    C = np.broadcast_to(cols[:, None, None, :, :], loc.shape)
    B = sp.coo_matrix((loc.ravel(), (R.ravel(), C.ravel())), shape=(spaces.n_stress, spaces.n_disp))
    return B.tocsr()


def stress_mass_blocks(spaces: FunctionSpaces) -> np.ndarray:
    """Per-cell mass blocks ``(nc, nsb*3, nsb*3)`` of the stress basis."""
    q = spaces.assembly_quadrature()
    phi = spaces.stress_basis_values(q)
    mb = np.einsum("cq,qa,qb->cab", q.wdet, phi, phi)
    nc, nsb = mb.shape[0], mb.shape[1]
    blocks = np.einsum("cab,ij->caibj", mb, np.diag(_W)).reshape(nc, nsb * 3, nsb * 3)
    return blocks


def assemble_stress_mass(spaces: FunctionSpaces) -> sp.csr_matrix:
    return sp.block_diag(list(stress_mass_blocks(spaces)), format="csr")


def block_inverse(blocks: np.ndarray) -> sp.csr_matrix:
    return sp.block_diag(list(np.linalg.inv(blocks)), format="csr")


def assemble_gradient_stiffness(spaces: FunctionSpaces) -> sp.csr_matrix:
    """Matrix of (u, v) -> integral grad u : grad v."""
    q = spaces.quadrature()
    lap = np.einsum("cq,cqai,cqbi->cab", q.wdet, q.grad, q.grad)
    loc = np.einsum("cab,kl->cakbl", lap, np.eye(2))
    dofs = spaces.disp_dofs()
    R = np.broadcast_to(dofs[:, :, :, None, None], loc.shape)
    C = np.broadcast_to(dofs[:, None, None, :, :], loc.shape)
    return sp.coo_matrix((loc.ravel(), (R.ravel(), C.ravel())), shape=(spaces.n_disp,) * 2).tocsr()


def assemble_strain_stiffness(spaces: FunctionSpaces) -> sp.csr_matrix:
    """Matrix of (u, v) -> integral eps(u) : eps(v)."""
    q = spaces.quadrature()
    eps = q.strain_basis()
    loc = np.einsum("cq,cqaki,cqblj,i,ij->cakbl", q.wdet, eps, eps, _W, np.eye(3))
    dofs = spaces.disp_dofs()
    R = np.broadcast_to(dofs[:, :, :, None, None], loc.shape)
    C = np.broadcast_to(dofs[:, None, None, :, :], loc.shape)
    return sp.coo_matrix((loc.ravel(), (R.ravel(), C.ravel())), shape=(spaces.n_disp,) * 2).tocsr()


def assemble_load(spaces: FunctionSpaces, body_force: Optional[Callable] = None,
                  tractions: Optional[dict] = None, edge_points: int = 3) -> np.ndarray:
    """integral f . v dx plus the boundary integrals of the tagged tractions."""
    F = np.zeros(spaces.n_disp)
    if body_force is not None:
        q = spaces.quadrature()
        f = _as_vector_field(body_force, q.points[..., 0], q.points[..., 1], 2)
        loc = np.einsum("cq,qa,cqk->cak", q.wdet, q.N, f)
        np.add.at(F, spaces.disp_dofs().ravel(), loc.ravel())
    for tag, traction in (tractions or {}).items():
        edges = spaces.mesh.tagged_edges(tag)
        if len(edges) == 0:
            continue
        s, w = gauss_1d(edge_points)
        a, b = spaces.mesh.nodes[edges[:, 0]], spaces.mesh.nodes[edges[:, 1]]
        length = np.linalg.norm(b - a, axis=1)
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        l = _as_vector_field(traction, pts[..., 0], pts[..., 1], 2)
        basis = np.column_stack([1 - s, s])
        loc = np.einsum("e,q,qa,eqk->eak", length, w, basis, l)
        dofs = np.stack([2 * edges, 2 * edges + 1], axis=-1)
        np.add.at(F, dofs.ravel(), loc.ravel())
    return F


def assemble_stress_source(spaces: FunctionSpaces, source: Optional[Callable]) -> np.ndarray:
    """Vector of integral G : (stress basis i); ``source(x, y) -> (..., 3)``."""
    if source is None:
        return np.zeros(spaces.n_stress)
    q = spaces.assembly_quadrature()
    G = _as_vector_field(source, q.points[..., 0], q.points[..., 1], 3)
    phi = spaces.stress_basis_values(q)
    return np.einsum("cq,qb,cqi,i->cbi", q.wdet, phi, G, _W).reshape(-1)


def project_stress(spaces: FunctionSpaces, T: Callable, npts: int = 5) -> np.ndarray:
    """L2 projection of a tensor field ``T(x, y) -> (..., 3)`` onto the stress space."""
    q = spaces.quadrature(npts)
    vals = _as_vector_field(T, q.points[..., 0], q.points[..., 1], 3)
    phi = spaces.stress_basis_values(q)
    mb = np.einsum("cq,qa,qb->cab", q.wdet, phi, phi)
    rhs = np.einsum("cq,qb,cqi->cbi", q.wdet, phi, vals)
    return np.linalg.solve(mb, rhs).reshape(-1)


def project_P0(spaces: FunctionSpaces, T: Callable, npts: int = 5) -> np.ndarray:
    """Cell averages of a tensor field."""
    if not spaces.piecewise_constant:
        raise ValueError("cell averages need a piecewise constant stress space")
    return project_stress(spaces, T, npts)


def evaluate_stress(spaces: FunctionSpaces, T_vec: np.ndarray, q: CellQuadrature) -> np.ndarray:
    """Stress components at the quadrature points, ``(nc, nq, 3)``."""
    phi = spaces.stress_basis_values(q)
    coeff = np.asarray(T_vec).reshape(spaces.mesh.n_cells, spaces.nsb, 3)
    return np.einsum("qb,cbi->cqi", phi, coeff)


def evaluate_displacement_gradient(spaces: FunctionSpaces, u: np.ndarray, q: CellQuadrature) -> np.ndarray:
    """grad u at the quadrature points, ``(nc, nq, 2, 2)`` with [..., k, i] = d u_k / d x_i."""
    ue = np.asarray(u)[spaces.disp_dofs()]  # (nc, nb, 2)
    return np.einsum("cak,cqai->cqki", ue, q.grad)


def cell_average_strain(spaces: FunctionSpaces, u: np.ndarray) -> np.ndarray:
    """Mean of eps(u) over each cell, ``(nc, 3)``."""
    q = spaces.quadrature()
    G = evaluate_displacement_gradient(spaces, u, q)
    eps = np.stack([G[..., 0, 0], G[..., 1, 1], 0.5 * (G[..., 0, 1] + G[..., 1, 0])], axis=-1)
    return np.einsum("cq,cqi->ci", q.wdet, eps) / q.wdet.sum(axis=1)[:, None]


def _corner_points(spaces: FunctionSpaces) -> CellQuadrature:
    """Pseudo-quadrature at the cell corners (zero weights), used for maxima."""
    mesh = spaces.mesh
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) if mesh.kind == "quad" else \
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    N, dN = shape_functions(mesh.kind, ref)
    X = mesh.nodes[mesh.cells]
    J = np.einsum("cai,qaj->cqij", X, dN)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    grad = np.einsum("qaj,cqji->cqai", dN, inv)
    return CellQuadrature(np.einsum("qa,cai->cqi", N, X), np.zeros(det.shape), N, grad, ref)


def _tensor_norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...i,i->...", a, a, _W))


def error_norms(spaces: FunctionSpaces, T_h: np.ndarray, u_h: np.ndarray,
                T_exact: Optional[Callable] = None, grad_u_exact: Optional[Callable] = None,
                npts: int = 5, u_exact: Optional[Callable] = None) -> dict[str, float]:
    """L1, L2 and Linf errors of the stress and L2/Linf errors of grad u.

    ``T_exact(x, y) -> (..., 3)``; ``grad_u_exact(x, y) -> (..., 2, 2)``. Maxima
    are taken over quadrature points and cell corners.
    """
    out: dict[str, float] = {}
    q = spaces.quadrature(npts)
    corners = _corner_points(spaces)
    if T_exact is not None:
        diffs = []
        for qq in (q, corners):
            ex = _as_vector_field(T_exact, qq.points[..., 0], qq.points[..., 1], 3)
            diffs.append(_tensor_norm(evaluate_stress(spaces, T_h, qq) - ex))
        d = diffs[0]
        out["T_L1"] = float(np.sum(q.wdet * d))
        out["T_L2"] = float(np.sqrt(np.sum(q.wdet * d**2)))
        out["T_Linf"] = float(max(d.max(), diffs[1].max()))
    if grad_u_exact is not None:
        diffs = []
        for qq in (q, corners):
            ex = np.asarray(grad_u_exact(qq.points[..., 0], qq.points[..., 1]), dtype=float)
            ex = np.broadcast_to(ex, qq.points.shape[:2] + (2, 2))
            diffs.append(np.linalg.norm(evaluate_displacement_gradient(spaces, u_h, qq) - ex, axis=(-2, -1)))
        d = diffs[0]
        out["gradu_L2"] = float(np.sqrt(np.sum(q.wdet * d**2)))
        out["gradu_Linf"] = float(max(d.max(), diffs[1].max()))
    if u_exact is not None:
        ue = np.asarray(u_h)[spaces.disp_dofs()]
        uh = np.einsum("qa,cak->cqk", q.N, ue)
        d = np.linalg.norm(uh - _as_vector_field(u_exact, q.points[..., 0], q.points[..., 1], 2), axis=-1)
        out["u_L2"] = float(np.sqrt(np.sum(q.wdet * d**2)))
    return out


def stress_norm(spaces: FunctionSpaces, T: np.ndarray, p: float = 2.0) -> float:
    """L_p norm of a discrete stress field (Frobenius norm pointwise)."""
    if spaces.piecewise_constant:
        a = spaces.cell_areas()
        v = _tensor_norm(np.asarray(T).reshape(-1, 3))
        return float(np.sum(a * v**p) ** (1.0 / p))
    q = spaces.assembly_quadrature()
    v = _tensor_norm(evaluate_stress(spaces, T, q))
    return float(np.sum(q.wdet * v**p) ** (1.0 / p))


def modular_phi(s, n: float):
    """s^2 / (1 + s)^(1 - 1/n)."""
    s = np.asarray(s, dtype=float)
    return s**2 / (1.0 + s) ** (1.0 - 1.0 / n)


def modular_error(spaces: FunctionSpaces, T_h: np.ndarray, T_ref, n: float, npts: int = 5) -> float:
    """integral of phi_n(|T_h - T_ref|); ``T_ref`` is a stress vector or a callable."""
    q = spaces.quadrature(npts)
    if callable(T_ref):
        ref = _as_vector_field(T_ref, q.points[..., 0], q.points[..., 1], 3)
    else:
        ref = evaluate_stress(spaces, T_ref, q)
    d = _tensor_norm(evaluate_stress(spaces, T_h, q) - ref)
    return float(np.sum(q.wdet * modular_phi(d, n)))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{float(v):.6g}" if isinstance(v, (float, np.floating)) else v for v in r])
