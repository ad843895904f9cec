from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from oracles import q1_reference_gradients
from strainlim.fem import (
    FunctionSpaces,
    assemble_coupling,
    assemble_load,
    assemble_strain_stiffness,
    assemble_stress_mass,
    assemble_stress_source,
    cell_average_strain,
    error_norms,
    evaluate_displacement_gradient,
    modular_error,
    modular_phi,
    project_P0,
    project_stress,
    stress_mass_blocks,
    write_csv,
)
from strainlim.mesh import crack_mesh, split_triangles, uniform_square_mesh

W = np.array([1.0, 1.0, 2.0])


def test_space_validation():
    with pytest.raises(ValueError):
        FunctionSpaces(uniform_square_mesh(2), stress_kind="P0")
    with pytest.raises(ValueError):
        FunctionSpaces(split_triangles(uniform_square_mesh(2)), stress_kind="Q0")
    with pytest.raises(ValueError):
        FunctionSpaces(uniform_square_mesh(2), stress_kind="P2")


def test_dirichlet_dofs_cover_boundary():
    sp_ = FunctionSpaces(uniform_square_mesh(3))
    assert len(sp_.dirichlet_dofs) == 2 * 12
    assert len(sp_.free_dofs) == 2 * 4
    crack = FunctionSpaces(crack_mesh(1), dirichlet_tags=("IV",))
    pts = crack.mesh.nodes[crack.dirichlet_dofs[::2] // 2]
    assert np.all(np.isclose(pts[:, 1], 0.0) | np.isclose(pts[:, 1], 2.0))


def test_single_cell_coupling_matches_hand_integrals():
    sp_ = FunctionSpaces(uniform_square_mesh(1))
    B = assemble_coupling(sp_).toarray()
    avg = np.array([[integrate.dblquad(lambda y, x: q1_reference_gradients(x, y)[a, i], 0, 1, 0, 1)[0]
                     for i in range(2)] for a in range(4)])
    expected = np.zeros((3, 8))
    for a, node in enumerate(sp_.mesh.cells[0]):
        expected[0, 2 * node] = avg[a, 0]
        expected[1, 2 * node + 1] = avg[a, 1]
        # xy basis tensor has both off-diagonal entries 1: contraction gives du_x/dy + du_y/dx
        expected[2, 2 * node] = avg[a, 1]
        expected[2, 2 * node + 1] = avg[a, 0]
    np.testing.assert_allclose(B, expected, atol=1e-14)


@pytest.mark.parametrize("kind", ["Q0", "Q1disc"])
def test_rigid_motions_in_kernel(kind):
    sp_ = FunctionSpaces(crack_mesh(2), stress_kind=kind)
    B = assemble_coupling(sp_)
    x, y = sp_.mesh.nodes.T
    for v in (np.column_stack([np.ones_like(x), 0 * x]), np.column_stack([0 * x, np.ones_like(x)]),
              np.column_stack([-y, x])):
        assert np.abs(B @ v.reshape(-1)).max() < 1e-13


def test_simplicial_inclusion_and_coupling_identity(rng):
    sp_ = FunctionSpaces(split_triangles(uniform_square_mesh(4)), stress_kind="P0")
    v = rng.normal(size=sp_.n_disp)
    q = sp_.quadrature(3)
    g = evaluate_displacement_gradient(sp_, v, q)
    # strain of a P1 field is constant on each triangle
    assert np.abs(g - g[:, :1]).max() < 1e-12
    R = cell_average_strain(sp_, v).reshape(-1)
    b = R @ (assemble_coupling(sp_) @ v)
    np.testing.assert_allclose(b, v @ (assemble_strain_stiffness(sp_) @ v), rtol=1e-12)


def test_stress_mass_q0():
    M1 = assemble_stress_mass(FunctionSpaces(uniform_square_mesh(1))).toarray()
    np.testing.assert_allclose(M1, np.diag(W), rtol=1e-15, atol=1e-15)
    M2 = assemble_stress_mass(FunctionSpaces(uniform_square_mesh(2))).diagonal()
    np.testing.assert_allclose(M2, np.tile(W / 4, 4), rtol=1e-15)


def test_q1disc_mass_is_exact_and_diagonal():
    """The 2x2 rule integrates the bilinear products times the affine Jacobian exactly."""
    sp_ = FunctionSpaces(crack_mesh(1), stress_kind="Q1disc")
    blocks = stress_mass_blocks(sp_)
    q = sp_.quadrature(6)
    phi = sp_.stress_basis_values(q)
    exact = np.einsum("cq,qa,qb->cab", q.wdet, phi, phi)
    np.testing.assert_allclose(blocks[:, 0::3, 0::3], exact, atol=1e-14)
    off = blocks - np.einsum("cii->ci", blocks)[:, :, None] * np.eye(12)
    assert np.abs(off).max() < 1e-14


def test_q1disc_coupling_exact_on_general_quads():
    coarse = FunctionSpaces(crack_mesh(1), stress_kind="Q1disc")
    B2 = assemble_coupling(coarse).toarray()
    q = coarse.quadrature(6)
    phi = coarse.stress_basis_values(q)
    loc = np.einsum("cq,qb,cqaki,i->cbiak", q.wdet, phi, q.strain_basis(), W)
    nc = loc.shape[0]
    B6 = np.zeros_like(B2)
    dofs = coarse.disp_dofs()
    for c in range(nc):
        for b in range(4):
            for i in range(3):
                B6[(c * 4 + b) * 3 + i, dofs[c].ravel()] += loc[c, b, i].ravel()
    np.testing.assert_allclose(B2, B6, atol=1e-13)


def test_load_examples():
    sp_ = FunctionSpaces(uniform_square_mesh(3))
    assert not assemble_load(sp_).any()
    crack = FunctionSpaces(crack_mesh(2), dirichlet_tags=("IV",))
    f = 0.75
    F = assemble_load(crack, tractions={"III": lambda x, y: np.stack([np.full_like(x, f), 0 * x], -1)})
    expected = np.zeros(crack.n_disp)
    for a, b in crack.mesh.tagged_edges("III"):
        L = np.linalg.norm(crack.mesh.nodes[b] - crack.mesh.nodes[a])
        expected[2 * a] += f * L / 2
        expected[2 * b] += f * L / 2
    np.testing.assert_allclose(F, expected, atol=1e-15)
    assert F.sum() == pytest.approx(2.0 * f)


def test_load_body_force_quadrature_converged():
    def force(x, y):
        return np.stack([-np.exp(x), np.sin(y)], axis=-1)

    F3 = assemble_load(FunctionSpaces(uniform_square_mesh(16)), force)
    F10 = assemble_load(FunctionSpaces(uniform_square_mesh(16), quad_order=10), force)
    np.testing.assert_allclose(F3, F10, atol=1e-12)
    # partition of unity: the entries sum to the integral of the force
    assert F3[0::2].sum() == pytest.approx(-(math.e - 1.0), rel=1e-12)
    assert F3[1::2].sum() == pytest.approx(1.0 - math.cos(1.0), rel=1e-12)


def test_stress_source_examples():
    sp_ = FunctionSpaces(uniform_square_mesh(4))
    assert not assemble_stress_source(sp_, None).any()
    G = np.array([0.3, -1.0, 2.0])
    src = assemble_stress_source(sp_, lambda x, y: G).reshape(-1, 3)
    np.testing.assert_allclose(src, np.tile(G * W / 16, (16, 1)), rtol=1e-14)

    def smooth(x, y):
        return np.stack([np.exp(x), np.cos(y), x * y], axis=-1)

    a = assemble_stress_source(sp_, smooth)
    b = assemble_stress_source(FunctionSpaces(uniform_square_mesh(4), quad_order=10), smooth)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_project_P0_examples():
    one = FunctionSpaces(uniform_square_mesh(1))
    c = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(project_P0(one, lambda x, y: c), c, rtol=1e-15)
    np.testing.assert_allclose(project_P0(one, lambda x, y: np.stack([x, 0 * x, 0 * x], -1)), [0.5, 0, 0], atol=1e-15)
    with pytest.raises(ValueError):
        project_P0(FunctionSpaces(uniform_square_mesh(1), stress_kind="Q1disc"), lambda x, y: c)


def _piecewise(N, values):
    def f(x, y):
        i = np.minimum((x * N).astype(int), N - 1)
        j = np.minimum((y * N).astype(int), N - 1)
        return values[j * N + i]
    return f


def test_projection_properties(rng):
    N = 8
    sp_ = FunctionSpaces(uniform_square_mesh(N))

    def S(x, y):
        return np.stack([np.sin(5 * x) * y, np.exp(x * y), np.where(x > 0.37, 1.0, -2.0) * y], axis=-1)

    P = project_P0(sp_, S, npts=8).reshape(-1, 3)
    q = sp_.quadrature(8)
    vals = S(q.points[..., 0], q.points[..., 1])
    l2 = lambda a: np.sqrt(np.sum(q.wdet * np.einsum("...i,...i,i->...", a, a, W)))  # noqa: E731
    assert l2(np.broadcast_to(P[:, None, :], vals.shape)) <= l2(vals)
    # residual is orthogonal to cellwise constants
    resid = np.einsum("cq,cqi->ci", q.wdet, vals - P[:, None, :])
    assert np.abs(resid).max() < 1e-14
    # idempotent
    again = project_P0(sp_, _piecewise(N, P), npts=4).reshape(-1, 3)
    np.testing.assert_allclose(again, P, atol=1e-14)


def test_error_norms_exact_fields():
    sp_ = FunctionSpaces(uniform_square_mesh(4))
    T = np.tile([1.0, -2.0, 0.5], 16)
    u = sp_.interpolate(lambda x, y: np.stack([2 * x - y, 3 * y + x], -1))
    out = error_norms(sp_, T, u, lambda x, y: np.array([1.0, -2.0, 0.5]),
                      lambda x, y: np.array([[2.0, -1.0], [1.0, 3.0]]))
    assert max(out.values()) < 1e-13


def test_error_norms_zero_displacement():
    sp_ = FunctionSpaces(uniform_square_mesh(8))

    def grad(x, y):
        g = np.zeros(x.shape + (2, 2))
        g[..., 0, 1] = 1 - 2 * y
        return g

    out = error_norms(sp_, np.zeros(sp_.n_stress), np.zeros(sp_.n_disp), grad_u_exact=grad)
    assert out["gradu_L2"] == pytest.approx(1 / math.sqrt(3), rel=1e-13)
    assert out["gradu_Linf"] == pytest.approx(1.0)


def test_modular_functional():
    sp_ = FunctionSpaces(uniform_square_mesh(4))
    T = project_stress(sp_, lambda x, y: np.stack([x, y, x * y], -1))
    assert modular_error(sp_, T, T, 3.0) == 0.0

    def ex(x, y):
        return np.stack([np.exp(x), np.cos(y), 0 * x], -1)

    l2 = error_norms(sp_, T, np.zeros(sp_.n_disp), ex)["T_L2"]
    assert modular_error(sp_, T, ex, 1.0) == pytest.approx(l2**2, rel=1e-12)
    s = np.logspace(-6, 6, 500)
    for n in (1.0, 2.0, 10.0, 1000.0):
        assert np.all(modular_phi(2 * s, n) <= 4 * modular_phi(s, n) * (1 + 1e-14))


def test_assembly_deterministic():
    a = assemble_coupling(FunctionSpaces(crack_mesh(2)))
    b = assemble_coupling(FunctionSpaces(crack_mesh(2)))
    assert (a != b).nnz == 0
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.data, b.data)


def test_write_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["h", "e", "ok"], [[0.25, 0.123456789, True], [np.float64(1e-7), 2.0, False]])
    assert path.read_text() == "h,e,ok\n0.25,0.123457,True\n1e-07,2,False\n"
