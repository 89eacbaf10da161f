import numpy as np
import pytest
import scipy.sparse as sp

from packopt import fem
from packopt.fem import (
    DirichletBC,
    FunctionSpace,
    LinearSolverConfig,
    LinearSolverError,
    NewtonDivergence,
    NewtonMaxIterations,
    apply_dirichlet,
    assemble_matrix,
    load_vector,
    mass_matrix,
    newton_solve,
    solve_linear,
    stiffness_matrix,
)
from packopt.mesh import BoundaryTag, MeshError, box_mesh, rectangle_mesh

ALL_SIDES = {s: BoundaryTag.CYL_WALL for s in ("left", "right", "bottom", "top")}


@pytest.mark.parametrize("dim", [2, 3])
def test_quadrature_weights_and_exactness(dim):
    lam, w = fem.cell_quadrature(dim)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(lam.sum(axis=1), 1.0, atol=1e-14)
    # exact reference-simplex moments: mean of l0^a l1^b = a! b! d! / (a+b+d)!
    from math import factorial
    for a, b in [(2, 2), (4, 0), (1, 3)]:
        exact = factorial(a) * factorial(b) * factorial(dim) / factorial(a + b + dim)
        assert w @ (lam[:, 0] ** a * lam[:, 1] ** b) == pytest.approx(exact, rel=1e-12)


def test_mass_matrix_unit_triangle(unit_triangle):
    M = mass_matrix(FunctionSpace(unit_triangle)).toarray()
    expected = np.full((3, 3), 1 / 24) + np.eye(3) / 24
    np.testing.assert_allclose(M, expected, rtol=1e-13)


@pytest.mark.parametrize("mesh", [rectangle_mesh(5, 3, 2.0, 0.5), box_mesh(2, 2, 3)])
def test_partition_of_unity(mesh):
    V = FunctionSpace(mesh)
    vol = fem.element_geometry(mesh)[1].sum()
    assert mass_matrix(V).sum() == pytest.approx(vol, rel=1e-12)
    assert load_vector(V, 1.0).sum() == pytest.approx(vol, rel=1e-12)
    np.testing.assert_allclose(stiffness_matrix(V) @ np.ones(V.size), 0.0, atol=1e-12)


def test_load_vector_unit_square(unit_square):
    assert load_vector(FunctionSpace(unit_square), 1.0).sum() == pytest.approx(1.0, rel=1e-14)


def test_stiffness_reproduces_linear_functions(unit_square):
    # interior rows of K annihilate any linear function
    V = FunctionSpace(unit_square)
    K = stiffness_matrix(V)
    x = unit_square.vertices
    interior = np.setdiff1d(np.arange(V.size), unit_square.tag_vertices(list(BoundaryTag)))
    r = K @ (2.0 * x[:, 0] - 3.0 * x[:, 1] + 1.0)
    np.testing.assert_allclose(r[interior], 0.0, atol=1e-12)


def test_function_space_layout(unit_square):
    V = FunctionSpace(unit_square, 2, offset=5)
    vals = np.arange(2 * unit_square.num_vertices, dtype=float).reshape(-1, 2)
    x = V.join(vals)
    assert x.shape == (5 + V.size,)
    np.testing.assert_array_equal(V.split(x), vals)
    nv = unit_square.num_vertices
    np.testing.assert_array_equal(V.dofs([3], 1), [5 + nv + 3])


def test_assembly_is_deterministic(unit_square):
    V = FunctionSpace(unit_square)
    a = stiffness_matrix(V)
    b = stiffness_matrix(V)
    assert (a != b).nnz == 0
    assert np.array_equal(a.data, b.data)


def _laplace(mesh, value):
    V = FunctionSpace(mesh)
    A, b = apply_dirichlet(stiffness_matrix(V), np.zeros(V.size),
                           [DirichletBC(V, [BoundaryTag.CYL_WALL], value)])
    return solve_linear(A, b), A


def test_dirichlet_examples():
    mesh = rectangle_mesh(6, 6, tags=ALL_SIDES)
    u, A = _laplace(mesh, 0.0)
    np.testing.assert_array_equal(u, 0.0)
    u, A = _laplace(mesh, 5.0)
    np.testing.assert_allclose(u, 5.0, rtol=1e-13)
    assert abs(A - A.T).max() == 0.0  # symmetric forms stay symmetric

    f = lambda x: 1.0 + 2.0 * x[:, 0] - 0.5 * x[:, 1]  # noqa: E731
    u, _ = _laplace(mesh, f)
    np.testing.assert_allclose(u, f(mesh.vertices), atol=1e-13)


def test_dirichlet_rows_exact():
    mesh = rectangle_mesh(4, 4, tags=ALL_SIDES)
    V = FunctionSpace(mesh)
    bc = DirichletBC(V, [BoundaryTag.CYL_WALL], lambda x: np.sin(7 * x[:, 0]))
    A, b = apply_dirichlet(stiffness_matrix(V), load_vector(V, 1.0), [bc])
    u = solve_linear(A, b)
    dofs, vals = bc.dofs_values()
    assert np.array_equal(u[dofs], vals)


def test_dirichlet_missing_tag(unit_square):
    V = FunctionSpace(unit_square)
    with pytest.raises(MeshError, match="absent"):
        apply_dirichlet(stiffness_matrix(V), np.zeros(V.size),
                        [DirichletBC(V, [BoundaryTag.PACKING], 1.0)])


def test_later_bcs_win():
    V = FunctionSpace(rectangle_mesh(3, 3))
    d, v = fem.collect_dirichlet([DirichletBC(V, [BoundaryTag.INLET], 1.0),
                                  DirichletBC(V, [BoundaryTag.CYL_WALL], 2.0)])
    corner = V.dofs([0])[0]
    assert v[list(d).index(corner)] == 2.0


@pytest.mark.parametrize("cfg", [LinearSolverConfig(),
                                 LinearSolverConfig("gmres", 1e-10),
                                 LinearSolverConfig("gmres", 1e-10, preconditioner="jacobi")])
def test_solve_linear_examples(cfg):
    np.testing.assert_allclose(solve_linear(sp.eye(4), np.arange(4.0), cfg), np.arange(4.0))
    x = solve_linear(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]), cfg)
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-9)
    rng = np.random.default_rng(3)
    B = rng.standard_normal((50, 50))
    A = sp.csr_matrix(B @ B.T + 50 * np.eye(50))
    b = rng.standard_normal(50)
    x, info = solve_linear(A, b, cfg, return_info=True)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= cfg.rtol
    assert info.residual <= cfg.rtol and info.iterations >= 1


def test_solve_linear_failure_reports_residual():
    rng = np.random.default_rng(0)
    A = sp.csr_matrix(rng.standard_normal((40, 40)))
    cfg = LinearSolverConfig("gmres", 1e-12, max_iterations=1, restart=2, preconditioner="jacobi")
    with pytest.raises(LinearSolverError) as info:
        solve_linear(A, rng.standard_normal(40), cfg)
    assert info.value.residual > 1e-12


def test_linear_config_validation():
    for kw in [dict(rtol=0.0), dict(rtol=1.0), dict(max_iterations=0), dict(method="cg"),
               dict(preconditioner="amg")]:
        with pytest.raises(ValueError):
            LinearSolverConfig(**kw)


def test_newton_linear_residual_one_step():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    res = newton_solve(lambda x: A @ x - b, lambda x: sp.csr_matrix(A), np.zeros(2))
    assert res.iterations == 1
    np.testing.assert_allclose(A @ res.x, b, atol=1e-12)


def test_newton_scalar_quadratic_convergence():
    res = newton_solve(lambda x: x ** 2 - 4.0, lambda x: sp.csr_matrix([[2.0 * x[0]]]),
                       np.array([3.0]), rel_tol=1e-12)
    assert res.x[0] == pytest.approx(2.0, rel=1e-12)
    e = np.array(res.residual_norms)
    # quadratic: r_{k+1} = r_k^2 / (4 x_k^2) for this residual
    ratios = e[2:] / e[1:-1] ** 2
    assert np.all(ratios < 1.0)


def test_newton_zero_iterations_at_solution():
    res = newton_solve(lambda x: x - 1.0, lambda x: sp.eye(1), np.array([1.0]), reference_norm=1.0)
    assert res.iterations == 0


def test_newton_error_kinds():
    with pytest.raises(NewtonMaxIterations):
        newton_solve(lambda x: x ** 2 - 4.0, lambda x: sp.csr_matrix([[2.0 * x[0]]]),
                     np.array([300.0]), rel_tol=1e-14, max_iter=2)
    # a constant residual can never be reduced
    with pytest.raises(NewtonDivergence):
        newton_solve(lambda x: np.array([1.0]) + 0 * x, lambda x: sp.eye(1), np.array([0.0]))


def test_assemble_matrix_shape():
    A = assemble_matrix(np.array([[0, 1]]), np.array([[0, 1]]), np.ones((1, 2, 2)), (3, 3))
    assert A.shape == (3, 3) and A.sum() == 4.0


def test_elasticity_matrix_rigid_modes(unit_square):
    A = fem.elasticity_matrix(FunctionSpace(unit_square, 2))
    V = FunctionSpace(unit_square, 2)
    shift = V.join(np.tile([1.0, 0.0], (unit_square.num_vertices, 1)))
    np.testing.assert_allclose(A @ shift, 0.0, atol=1e-12)
    assert abs(A - A.T).max() < 1e-14
