"""Inf-sup diagnostics, checkerboard modes, convergence orders and a-priori bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FunctionSpaces, assemble_coupling, evaluate_displacement_gradient
from .mesh import Mesh, checkerboard_partition
from .tensor import contraction_weights

_W = contraction_weights(2)


@dataclass
class InfSupReport:
    h: float
    ratio: float
    n: float
    pair: str


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...i,i->...", a, a, _W))


def _strain_at(spaces: FunctionSpaces, v: np.ndarray, npts: int):
    q = spaces.quadrature(npts)
    g = evaluate_displacement_gradient(spaces, v, q)
    eps = np.stack([g[..., 0, 0], g[..., 1, 1], 0.5 * (g[..., 0, 1] + g[..., 1, 0])], axis=-1)
    return q, eps


def supremizer_field(spaces: FunctionSpaces, v: np.ndarray, n: float, npts: int = 5) -> np.ndarray:
    """Cellwise stress |K|^-n (int_K eps(v)) |int_K eps(v)|^(n-1).

    On triangles with P1 displacements the strain is constant per cell and this
    is eps(v) |eps(v)|^(n-1).
    """
    if not spaces.piecewise_constant:
        raise ValueError("supremizer needs a piecewise constant stress space")
    q, eps = _strain_at(spaces, v, npts)
    area = q.wdet.sum(axis=1)
    integ = np.einsum("cq,cqi->ci", q.wdet, eps)
    mag = _norm(integ)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0.0, mag ** (n - 1.0), 0.0) / area**n
    return (scale[:, None] * integ).reshape(-1)


def supremizer_ratio(spaces: FunctionSpaces, v: np.ndarray, n: float, T: np.ndarray | None = None,
                     npts: int = 5) -> float:
    """b(T, v) / (||T||_{L_{1+1/n}} ||eps(v)||_{L_{n+1}}) for the constructed supremizer T."""
    if T is None:
        T = supremizer_field(spaces, v, n, npts)
    q, eps = _strain_at(spaces, v, npts)
    eps_norm = np.sum(q.wdet * _norm(eps) ** (n + 1.0)) ** (1.0 / (n + 1.0))
    if eps_norm == 0.0:
        raise ValueError("zero strain field")
    B = assemble_coupling(spaces)
    b = float(T @ (B @ v))
    area = q.wdet.sum(axis=1)
    p = 1.0 + 1.0 / n
    T_norm = np.sum(area * _norm(T.reshape(-1, 3)) ** p) ** (1.0 / p)
    if T_norm == 0.0:
        return 0.0
    return b / (T_norm * eps_norm)


def checkerboard_mode(mesh: Mesh) -> np.ndarray:
    """+1 at interior node (i, j) when i + j is odd, -1 when even, in both components."""
    idx = mesh.interior_node_grid()  # [i-1, j-1]
    nx, ny = idx.shape
    i, j = np.meshgrid(np.arange(1, nx + 1), np.arange(1, ny + 1), indexing="ij")
    val = np.where((i + j) % 2 == 1, 1.0, -1.0)
    v = np.zeros(2 * mesh.n_nodes)
    v[2 * idx.ravel()] = val.ravel()
    v[2 * idx.ravel() + 1] = val.ravel()
    return v


def checkerboard_quotient(N: int, n: float) -> tuple[float, float]:
    """(h, quotient) for the checkerboard mode with the boundary-cell stress choice.

    The stress equals the cellwise supremizer on cells where the strain
    integral is nonzero (the boundary layer) and zero elsewhere.
    """
    mesh = checkerboard_partition(N)
    spaces = FunctionSpaces(mesh)
    v = checkerboard_mode(mesh)
    T = supremizer_field(spaces, v, n).reshape(-1, 3)
    nx, ny = mesh.grid_shape
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    interior = ((ci > 0) & (ci < nx - 1) & (cj > 0) & (cj < ny - 1)).T.ravel()
    T[interior] = 0.0
    return 1.0 / (N + 1), supremizer_ratio(spaces, v, n, T.reshape(-1))


def boundary_strain_integrals(N: int) -> tuple[np.ndarray, np.ndarray]:
    """|int_K eps(v)| of the checkerboard mode on interior and boundary-layer cells."""
    mesh = checkerboard_partition(N)
    spaces = FunctionSpaces(mesh)
    q, eps = _strain_at(spaces, checkerboard_mode(mesh), 3)
    mag = _norm(np.einsum("cq,cqi->ci", q.wdet, eps))
    nx, ny = mesh.grid_shape
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    interior = ((ci > 0) & (ci < nx - 1) & (cj > 0) & (cj < ny - 1)).T.ravel()
    return mag[interior], mag[~interior]


def fit_exponent(h, values) -> float:
    """Least-squares slope of log(values) against log(h)."""
    return float(np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(values, float)), 1)[0])


def checkerboard_decay_study(N_list, n: float) -> tuple[list[InfSupReport], float]:
    reports = []
    for N in N_list:
        h, r = checkerboard_quotient(N, n)
        reports.append(InfSupReport(h=h, ratio=r, n=n, pair="Q0/Q1"))
    return reports, fit_exponent([r.h for r in reports], [r.ratio for r in reports])


def eoc(errors) -> list[float]:
    """log2(e_i / e_{i+1}) for consecutive halvings; NaN when an error is at round-off."""
    e = np.asarray(errors, dtype=float)
    out = [np.nan]
    for a, b in zip(e[:-1], e[1:]):
        out.append(float(np.log2(a / b)) if a > 1e-13 and b > 1e-13 else np.nan)
    return out


def apriori_stress_bound(F_norm: float, n: float, C1: float, C2: float, kappa: float,
                         volume: float, d: int = 2) -> float:
    """Right-hand side of the a-priori stress estimate for data of L_{1+1/n} norm ``F_norm``."""
    p = 1.0 + 1.0 / n
    return (16.0 * d**2 / (n + 1.0) * F_norm**p
            + 2.0 * C2 * np.sqrt(2.0 * d) * volume ** (1.0 / (n + 1.0)) * F_norm
            + 4.0 * C1 * kappa * volume)


def apriori_stress_lhs(T_norm_p: float, T_norm_1: float, n: float, C1: float) -> float:
    """(1/(n+1)) ||T||_{1+1/n}^{1+1/n} + C1 ||T||_1."""
    return T_norm_p ** (1.0 + 1.0 / n) / (n + 1.0) + C1 * T_norm_1
