from __future__ import annotations

import numpy as np
import pytest

from strainlim.diagnostics import (
    InfSupReport,
    apriori_stress_bound,
    apriori_stress_lhs,
    boundary_strain_integrals,
    checkerboard_decay_study,
    checkerboard_mode,
    checkerboard_quotient,
    eoc,
    fit_exponent,
    supremizer_field,
    supremizer_ratio,
)
from strainlim.experiments import smooth_f, smooth_T
from strainlim.fem import FunctionSpaces, stress_norm, project_stress
from strainlim.material import RegularizationParams, builtin_law
from strainlim.mesh import checkerboard_partition, split_triangles, uniform_square_mesh
from strainlim.solver import DecoupledSolver, Problem, SolverConfig


def test_checkerboard_single_interior_node():
    mesh = checkerboard_partition(1)
    v = checkerboard_mode(mesh).reshape(-1, 2)
    interior = np.flatnonzero(np.any(v != 0.0, axis=1))
    assert interior.size == 1
    np.testing.assert_array_equal(v[interior[0]], [-1.0, -1.0])
    np.testing.assert_allclose(mesh.nodes[interior[0]], [0.5, 0.5])


def test_checkerboard_parity_and_boundary_zero():
    N = 5
    mesh = checkerboard_partition(N)
    v = checkerboard_mode(mesh).reshape(-1, 2)
    ij = np.rint(mesh.nodes * (N + 1)).astype(int)
    on_bd = (ij == 0).any(axis=1) | (ij == N + 1).any(axis=1)
    assert np.all(v[on_bd] == 0.0)
    expect = np.where((ij[:, 0] + ij[:, 1]) % 2 == 1, 1.0, -1.0)
    np.testing.assert_array_equal(v[~on_bd, 0], expect[~on_bd])
    np.testing.assert_array_equal(v[~on_bd, 1], expect[~on_bd])


@pytest.mark.parametrize("N", [3, 7, 15, 31])
def test_checkerboard_interior_annihilation_and_boundary_scaling(N):
    inner, outer = boundary_strain_integrals(N)
    assert np.abs(inner).max() <= 1e-13
    h = 1.0 / (N + 1)
    # measured constants: 1/sqrt(2) on edge cells, sqrt(3/2) at corners
    assert outer.min() / h >= 0.7
    assert outer.max() / h <= 1.25


@pytest.mark.parametrize("n", [1.0, 2.0])
def test_checkerboard_decay(n):
    reports, slope = checkerboard_decay_study([7, 15, 31, 63], n)
    assert all(isinstance(r, InfSupReport) and r.ratio >= 0 for r in reports)
    ratios = [r.ratio for r in reports]
    assert all(a > b for a, b in zip(ratios[:-1], ratios[1:]))
    assert abs(slope - 1.0 / (n + 1.0)) <= 0.15


def test_checkerboard_quotient_h():
    h, r = checkerboard_quotient(7, 1.0)
    assert h == pytest.approx(1.0 / 8.0)
    assert 0.0 < r < 1.0


@pytest.mark.parametrize("level", [2, 3, 4])
@pytest.mark.parametrize("n", [1.0, 2.0, 5.0])
def test_simplicial_supremizer_ratio_is_one(level, n, rng):
    spaces = FunctionSpaces(split_triangles(uniform_square_mesh(2**level)), stress_kind="P0")
    for _ in range(20):
        v = rng.standard_normal(spaces.n_disp)
        assert supremizer_ratio(spaces, v, n) == pytest.approx(1.0, abs=1e-10)


def test_q0_ratio_for_cellwise_constant_strain():
    spaces = FunctionSpaces(uniform_square_mesh(4))
    x, y = spaces.mesh.nodes.T
    v = np.stack([0.3 * x - 0.2 * y, 0.5 * x + 0.1 * y], axis=1).reshape(-1)
    for n in (1.0, 3.0):
        assert supremizer_ratio(spaces, v, n) == pytest.approx(1.0, abs=1e-12)


def test_q0_random_ratio_positive(rng):
    spaces = FunctionSpaces(uniform_square_mesh(8))
    ratios = [supremizer_ratio(spaces, rng.standard_normal(spaces.n_disp), 2.0) for _ in range(10)]
    assert min(ratios) > 0.0


def test_supremizer_errors():
    spaces = FunctionSpaces(uniform_square_mesh(2))
    with pytest.raises(ValueError):
        supremizer_ratio(spaces, np.zeros(spaces.n_disp), 1.0)
    with pytest.raises(ValueError):
        supremizer_field(FunctionSpaces(uniform_square_mesh(2), stress_kind="Q1disc"), np.ones(spaces.n_disp), 1.0)


def test_eoc_and_fit():
    e = [0.4, 0.2, 0.1, 0.05]
    out = eoc(e)
    assert np.isnan(out[0])
    np.testing.assert_allclose(out[1:], 1.0)
    flagged = eoc([1e-15, 1e-16])
    assert np.isnan(flagged[1])
    assert fit_exponent([0.5, 0.25, 0.125], [0.25, 0.0625, 0.015625]) == pytest.approx(2.0)


def test_apriori_bound_holds_pure_dirichlet():
    # f = -div F with F = diag(e^x, cos y), zero displacement on the boundary, t = n
    n = 2.0
    law = builtin_law()
    spaces = FunctionSpaces(uniform_square_mesh(8))
    prob = Problem(spaces, law, RegularizationParams(n, n), body_force=smooth_f)
    st = DecoupledSolver(prob, SolverConfig(tau=0.5, tol=1e-8)).run()
    assert st.converged
    p = 1.0 + 1.0 / n
    lhs = apriori_stress_lhs(stress_norm(spaces, st.T, p), stress_norm(spaces, st.T, 1.0), n, law.C1)
    F_norm = stress_norm(spaces, project_stress(spaces, smooth_T, 5), p)
    rhs = apriori_stress_bound(F_norm, n, law.C1, law.C2, law.kappa, volume=1.0)
    assert 0.0 < lhs <= rhs
