import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cardio_nlsolve.errors import ConfigurationError, LinearSolveBreakdown
from cardio_nlsolve.grid_fem import assemble_mass, assemble_stiffness, build_grid, rotated_fibers
from cardio_nlsolve.sparse_la import (
    LinearSolveSpec,
    as_csr,
    build_gmg,
    get_num_threads,
    gmg_vcycle,
    grid_prolongation,
    jacobi_preconditioner,
    mean_projector,
    pcg_solve,
    prolongation_1d,
    set_num_threads,
    spmv,
)


def laplace_mass(n, length=1.0):
    g = build_grid(n, n, n, length / n, length / n, length / n)
    K = assemble_stiffness(g, rotated_fibers(g, 0, 0), (1.0, 1.0, 1.0))
    return g, as_csr(K + assemble_mass(g))


def poisson_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


# spmv


def test_spmv_identity_and_diagonal():
    x = np.array([1.5, -2.0, 3.0])
    np.testing.assert_array_equal(spmv(as_csr(sp.identity(3)), x), x)
    np.testing.assert_array_equal(spmv(as_csr(np.diag([2.0, 3.0])), np.ones(2)), [2.0, 3.0])


@pytest.mark.parametrize("threads", [1, 3])
def test_spmv_random_vs_dense(threads):
    rng = np.random.default_rng(1)
    A = sp.random(50, 50, density=0.2, random_state=2, format="csr")
    x = rng.standard_normal(50)
    previous = get_num_threads()
    try:
        set_num_threads(threads)
        y = spmv(A, x)
    finally:
        set_num_threads(previous)
    ref = A.toarray() @ x
    assert np.linalg.norm(y - ref) <= 1e-14 * np.linalg.norm(ref)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(as_csr(sp.identity(3)), np.ones(4))


def test_as_csr_canonical():
    A = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
    C = as_csr(A)
    assert C.nnz == 2 and C[0, 1] == 3.0
    assert np.all(np.diff(C.indptr) >= 0)


def test_thread_count_validation():
    with pytest.raises(ConfigurationError):
        set_num_threads(0)


# spec validation


@pytest.mark.parametrize(
    "kw", [{"method": "gmres"}, {"preconditioner": "ilu"}, {"rtol": -1.0}, {"max_it": 0}, {"fixed_it": 0}]
)
def test_linear_spec_rejects(kw):
    with pytest.raises(ConfigurationError):
        LinearSolveSpec(**kw)


# CG


def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 0.5])
    x, its, res = pcg_solve(as_csr(sp.identity(3)), b, LinearSolveSpec(preconditioner="none"))
    np.testing.assert_allclose(x, b)
    assert its == 1 and res == 0.0


def test_cg_poisson_1d_jacobi():
    A = poisson_1d(32)
    b = np.random.default_rng(3).standard_normal(32)
    x, its, res = pcg_solve(A, b, LinearSolveSpec(preconditioner="jacobi", rtol=1e-10))
    assert its <= 64
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-8)
    assert res <= 1e-10 * np.linalg.norm(b)


def test_preonly_jacobi_diagonal():
    x, its, _ = pcg_solve(as_csr(np.diag([2.0, 4.0])), np.array([2.0, 4.0]),
                          LinearSolveSpec(method="preonly", preconditioner="jacobi"))
    np.testing.assert_allclose(x, [1.0, 1.0])
    assert its == 0


def test_fixed_iterations_run_exactly():
    A = poisson_1d(40)
    b = np.ones(40)
    _, its, _ = pcg_solve(A, b, LinearSolveSpec(preconditioner="none", fixed_it=7, rtol=0.5))
    assert its == 7


def test_cg_indefinite_breakdown_names_iteration():
    A = as_csr(np.diag([1.0, -1.0]))
    with pytest.raises(LinearSolveBreakdown) as info:
        pcg_solve(A, np.array([1.0, 2.0]), LinearSolveSpec(preconditioner="none"))
    assert info.value.iteration == 1


def test_cg_gmg_needs_action():
    with pytest.raises(ConfigurationError):
        pcg_solve(poisson_1d(4), np.ones(4), LinearSolveSpec(preconditioner="gmg"))


def test_projected_cg_on_singular_laplacian():
    g = build_grid(4, 4, 4, 0.25, 0.25, 0.25)
    K = assemble_stiffness(g, rotated_fibers(g, 0, 0), (1.0, 1.0, 1.0))
    b = np.random.default_rng(0).standard_normal(g.n_nodes)
    x, _, res = pcg_solve(K, b, LinearSolveSpec(preconditioner="jacobi", rtol=1e-10, project_nullspace=True))
    assert abs(x.mean()) < 1e-12
    bp = b - b.mean()
    assert np.linalg.norm(bp - K @ x) <= 1e-9 * np.linalg.norm(bp)


def test_mean_projector_segment():
    x = np.array([1.0, 2.0, 3.0, 5.0])
    np.testing.assert_allclose(mean_projector(2, 4)(x), [1.0, 2.0, -1.0, 1.0])
    np.testing.assert_allclose(x, [1.0, 2.0, 3.0, 5.0])


def test_jacobi_zero_diagonal_rejected():
    with pytest.raises(ConfigurationError):
        jacobi_preconditioner(as_csr(np.array([[0.0, 1.0], [1.0, 1.0]])))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**31 - 1))
def test_cg_finite_termination_dense_spd(n, seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * rng.uniform(1.0, 10.0, n)) @ Q.T
    A = 0.5 * (A + A.T)
    b = rng.standard_normal(n)
    x, its, _ = pcg_solve(A, b, LinearSolveSpec(preconditioner="jacobi", rtol=1e-12, max_it=10 * n))
    assert its <= n
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8 * max(1, np.abs(np.linalg.solve(A, b)).max()))


def test_cg_error_energy_norm_monotone():
    rng = np.random.default_rng(5)
    n = 30
    M = rng.standard_normal((n, n))
    A = M @ M.T + n * np.eye(n)
    b = rng.standard_normal(n)
    xs = np.linalg.solve(A, b)
    errs = []
    for k in range(1, n + 1):
        x, _, _ = pcg_solve(A, b, LinearSolveSpec(preconditioner="jacobi", fixed_it=k))
        e = x - xs
        errs.append(np.sqrt(e @ A @ e))
        if errs[-1] < 1e-13:
            break
    assert all(b_ <= a_ * (1 + 1e-12) + 1e-14 for a_, b_ in zip(errs, errs[1:]))


# multigrid


def test_prolongation_reproduces_constants():
    P = prolongation_1d(4)
    np.testing.assert_allclose(P @ np.ones(5), 1.0)
    g = build_grid(2, 2, 2, 0.5, 0.5, 0.5)
    P3 = grid_prolongation(g)
    assert P3.shape == (125, 27)
    np.testing.assert_allclose(P3 @ np.ones(27), 1.0)


def test_prolongation_interpolates_linear_fields():
    coarse = build_grid(2, 2, 2, 0.5, 0.5, 0.5)
    fine = coarse.refine() if hasattr(coarse, "refine") else build_grid(4, 4, 4, 0.25, 0.25, 0.25)
    c = np.array([0.7, -0.2, 1.3])
    P = grid_prolongation(coarse)
    np.testing.assert_allclose(P @ (coarse.coordinates @ c), fine.coordinates @ c, atol=1e-14)


def test_galerkin_levels_symmetric():
    g, A = laplace_mass(8)
    h = build_gmg(g, A)
    assert h.n_levels == 4
    for k, lvl in enumerate(h.levels[:-1]):
        Ac = h.levels[k + 1].A
        assert abs(Ac - lvl.P.T @ lvl.A @ lvl.P).max() <= 1e-12
        assert abs(Ac - Ac.T).max() <= 1e-15
    assert h.levels[-1].A.shape == (8, 8)


def test_hierarchy_stops_at_odd_count():
    g, A = laplace_mass(6)
    h = build_gmg(g, A)
    assert [gr.shape for gr in h.grids] == [(6, 6, 6), (3, 3, 3)]


def test_vcycle_zero_rhs():
    g, A = laplace_mass(8)
    h = build_gmg(g, A)
    np.testing.assert_array_equal(gmg_vcycle(h, np.zeros(g.n_nodes), np.zeros(g.n_nodes)), 0.0)


def test_vcycle_symmetric_operator():
    g, A = laplace_mass(4)
    h = build_gmg(g, A)
    B = np.column_stack([gmg_vcycle(h, e) for e in np.eye(g.n_nodes)])
    np.testing.assert_allclose(B, B.T, atol=1e-12)


def test_vcycle_energy_contraction_8():
    g, A = laplace_mass(8)
    h = build_gmg(g, A)
    Ad = A.toarray()
    L = np.linalg.cholesky(Ad)
    # error propagation E = I - B A; its A-norm is the 2-norm of L^T E L^-T
    rng = np.random.default_rng(0)
    e = rng.standard_normal(g.n_nodes)
    rate = 0.0
    for _ in range(60):
        e = e / np.sqrt(e @ Ad @ e)
        e_new = e - gmg_vcycle(h, Ad @ e)
        rate = np.sqrt(e_new @ Ad @ e_new)
        e = e_new
    # cross-check against the dense operator norm
    B = np.column_stack([gmg_vcycle(h, col) for col in np.eye(g.n_nodes)])
    E = np.eye(g.n_nodes) - B @ Ad
    dense_rate = np.linalg.norm(L.T @ E @ np.linalg.inv(L.T), 2)
    assert rate <= dense_rate + 1e-8
    assert dense_rate <= 0.5


def test_gmg_pcg_beats_jacobi_16():
    g, A = laplace_mass(16)
    b = np.random.default_rng(7).standard_normal(g.n_nodes)
    h = build_gmg(g, A)
    spec = LinearSolveSpec(rtol=1e-8, max_it=2000)
    x_g, its_g, _ = pcg_solve(A, b, spec, preconditioner=h)
    x_j, its_j, _ = pcg_solve(A, b, LinearSolveSpec(preconditioner="jacobi", rtol=1e-8, max_it=2000))
    assert its_g <= 25
    assert its_g < its_j
    assert np.linalg.norm(b - A @ x_g) <= 1e-8 * np.linalg.norm(b)
