import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cardio_nlsolve.bidomain import BidomainProblem
from cardio_nlsolve.errors import CapabilityError, ConfigurationError
from cardio_nlsolve.grid_fem import ConductivitySet, build_grid, rotated_fibers
from cardio_nlsolve.ionic import FitzHughNagumo
from cardio_nlsolve.nsolve import (
    METHODS,
    FunctionSystem,
    NonlinearSolveSpec,
    dense_bfgs_inverse,
    eisenstat_walker,
    fitted_order,
    inexact_newton_solve,
    lbfgs_direction,
    mixing_weights,
    ncg_beta,
    ncg_solve,
    newton_solve,
    ngmres_solve,
    qn_solve,
    solve,
)
from cardio_nlsolve.nsolve.qn import admissible_pair
from cardio_nlsolve.sparse_la import LinearSolveSpec

DIRECT = LinearSolveSpec(preconditioner="jacobi", rtol=1e-14, max_it=500)


def spd(n, seed, lo=1.0, hi=4.0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * rng.uniform(lo, hi, n)) @ Q.T


def affine_system(n=6, seed=0, lo=1.0, hi=4.0):
    A = spd(n, seed, lo, hi)
    A = 0.5 * (A + A.T)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    return FunctionSystem(lambda x: A @ x - b, n, jacobian=lambda x: A), A, b


def cubic_system(n=8, seed=3):
    """F = A x + x^3 - b: gradient of a strictly convex potential."""
    A = spd(n, seed, 0.5, 1.0)
    A = 0.5 * (A + A.T)
    b = np.random.default_rng(seed).standard_normal(n)
    return FunctionSystem(lambda x: A @ x + x**3 - b, n, jacobian=lambda x: A + np.diag(3 * x**2))



def bidomain_step(n=4, length=0.1):
    g = build_grid(n, n, n, length / n, length / n, length / n)
    p = BidomainProblem(g, rotated_fibers(g, -1.0, 1.0), ConductivitySet(), FitzHughNagumo())
    N = g.n_nodes
    stim = (g.coordinates.max(axis=1) <= length / 2).astype(float) * 2000.0
    p.set_step(np.zeros(N), np.zeros(N), stim, -stim)
    return p


# spec


@pytest.mark.parametrize(
    "kw", [{"method": "bfgs"}, {"ncg_beta": "hs"}, {"qn_m": 0}, {"ngmres_m": 0}, {"ew_rtol0": 1.0}, {"max_it": -1}]
)
def test_spec_validation(kw):
    with pytest.raises(ConfigurationError):
        NonlinearSolveSpec(**kw)


def test_spec_defaults():
    s = NonlinearSolveSpec()
    assert (s.atol, s.rtol, s.stol, s.max_it, s.jaclow_inner_it) == (1e-12, 1e-6, 0.0, 2000, 10)


# Newton


def test_newton_scalar_iterates():
    seen = []

    def F(x):
        seen.append(float(x[0]))
        return x**2 - 4

    sys = FunctionSystem(F, 1, jacobian=lambda x: np.array([[2 * x[0]]]))
    spec = NonlinearSolveSpec(max_it=2, rtol=0.0, atol=0.0, linear=DIRECT)
    x, tr = newton_solve(sys, spec, np.array([3.0]))
    assert seen[:3] == pytest.approx([3.0, 13 / 6, 2.00641025641], rel=1e-10)
    assert tr.reason == "max_it" and not tr.converged
    assert tr.residual_norms[0] == 5.0


def test_newton_scalar_quadratic_contraction():
    sys = FunctionSystem(lambda x: x**2 - 4, 1, jacobian=lambda x: np.array([[2 * x[0]]]))
    x, tr = newton_solve(sys, NonlinearSolveSpec(rtol=0, atol=1e-14, linear=DIRECT), np.array([3.0]))
    r = tr.residual_norms
    assert x[0] == pytest.approx(2.0, abs=1e-14)
    assert all(b <= 0.5 * a**2 for a, b in zip(r[1:-1], r[2:]))


def test_newton_affine_one_iteration():
    sys, A, b = affine_system()
    x, tr = newton_solve(sys, NonlinearSolveSpec(linear=DIRECT), np.zeros(6))
    assert tr.iterations == 1 and tr.converged
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-12)


def test_newton_cubic_quadratic_convergence():
    sys = cubic_system()
    x, tr = newton_solve(sys, NonlinearSolveSpec(rtol=0.0, atol=1e-13, linear=DIRECT), np.full(8, 2.0))
    assert tr.converged
    r = np.array(tr.residual_norms)
    tail = r[-4:-1]
    slope = np.polyfit(np.log(tail[:-1]), np.log(tail[1:]), 1)[0]
    assert slope >= 1.8


def test_eisenstat_walker_reduction_and_safeguards():
    assert eisenstat_walker(0.3, 1.0, 0.0) == pytest.approx(0.3)
    assert eisenstat_walker(1e-12, 1.0, 0.0) == 1e-6
    assert eisenstat_walker(5.0, 1.0, 0.0) == 0.9
    assert eisenstat_walker(0.5, 1.0, 0.2) == pytest.approx(0.3)


def test_inexact_newton_affine_terminates_after_exact_solve():
    sys, A, b = affine_system(lo=1.0, hi=1.0 + 1e-9)
    x, tr = inexact_newton_solve(sys, NonlinearSolveSpec(linear=DIRECT), np.zeros(6))
    assert tr.converged and tr.iterations == 1
    assert tr.info["forcing"] == [0.1]


def test_inexact_newton_forcing_sequence():
    sys = cubic_system()
    x, tr = inexact_newton_solve(sys, NonlinearSolveSpec(rtol=1e-10, linear=DIRECT), np.full(8, 2.0))
    assert tr.converged
    etas = tr.info["forcing"]
    assert etas[0] == 0.1
    assert all(1e-6 <= e <= 0.9 for e in etas)
    assert "ew1" in tr.info["forcing_formula"]


# quasi-Newton


def test_lbfgs_empty_history_is_b0():
    g = np.array([1.0, -2.0])
    np.testing.assert_allclose(lbfgs_direction([], g, lambda q: 0.5 * q), -0.5 * g)


def test_lbfgs_one_dimensional_secant_exact():
    a = 3.7
    s = np.array([0.4])
    d = lbfgs_direction([(s, a * s)], np.array([2.0]), lambda q: q)
    np.testing.assert_allclose(d, [-2.0 / a], rtol=1e-15)


def random_history(n, m, seed):
    A = spd(n, seed)
    rng = np.random.default_rng(seed + 7)
    hist = []
    for _ in range(m):
        s = rng.standard_normal(n)
        hist.append((s, A @ s))
    return hist


def test_two_loop_matches_dense_recursion_example():
    hist = random_history(5, 3, 0)
    H0 = np.diag(np.linspace(0.5, 1.5, 5))
    g = np.random.default_rng(9).standard_normal(5)
    dense = -dense_bfgs_inverse(H0, hist) @ g
    np.testing.assert_allclose(lbfgs_direction(hist, g, lambda q: H0 @ q), dense, rtol=1e-13, atol=1e-14)


def literal_inverse_update(H0, hist):
    """Inverse update written out term by term as an independent oracle."""
    H = H0.copy()
    for s, y in hist:
        rho = 1.0 / (s @ y)
        I = np.eye(len(s))
        H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
    return H


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 10), st.integers(0, 10**6))
def test_two_loop_equals_inverse_update(n, m, seed):
    hist = random_history(n, m, seed)
    H0 = np.eye(n) * 0.7
    H = literal_inverse_update(H0, hist)
    g = np.random.default_rng(seed).standard_normal(n)
    d = lbfgs_direction(hist, g, lambda q: H0 @ q)
    assert np.linalg.norm(d + H @ g) <= 1e-12 * max(np.linalg.norm(H @ g), 1e-300) + 1e-14
    s, y = hist[-1]
    np.testing.assert_allclose(H @ y, s, rtol=1e-10, atol=1e-10 * np.linalg.norm(s))


def test_curvature_safeguard_skips_pairs():
    s = np.array([1.0, 0.0])
    assert not admissible_pair(s, np.array([-1.0, 0.0]))
    assert not admissible_pair(s, np.array([0.0, 1.0]))
    g = np.array([1.0, 1.0])
    np.testing.assert_allclose(lbfgs_direction([(s, np.array([0.0, 1.0]))], g, lambda q: q), -g)


@pytest.mark.parametrize("mode", ["preonly", "jaclow"])
def test_qn_affine_exact_b0_one_iteration(mode):
    sys, A, b = affine_system()
    linear = LinearSolveSpec(preconditioner="none")
    Ainv = np.linalg.inv(A)
    sys.preconditioner = lambda J, kind: (lambda r: Ainv @ r)
    spec = NonlinearSolveSpec(method=f"qn_{mode}", linear=linear, jaclow_inner_it=1)
    x, tr = qn_solve(sys, spec, np.zeros(6))
    assert tr.iterations == 1 and tr.converged


@pytest.mark.parametrize("method", ["qn_preonly", "qn_jaclow"])
def test_qn_converges_on_cubic_and_secant_holds(method):
    sys = cubic_system()
    spec = NonlinearSolveSpec(method=method, rtol=1e-10, qn_m=50, linear=LinearSolveSpec(preconditioner="jacobi"))
    steps = []
    orig = sys.residual

    def residual(x):
        steps.append(np.array(x))
        return orig(x)

    sys.residual = residual
    x, tr = solve(sys, spec, np.full(8, 0.5))
    assert tr.converged
    xs = steps
    hist = [(b - a, orig(b) - orig(a)) for a, b in zip(xs[:-1], xs[1:])]
    J0 = np.asarray(sys.jacobian(xs[0]))
    H0 = np.diag(1 / np.diag(J0)) if method == "qn_preonly" else None
    if H0 is not None:
        H = dense_bfgs_inverse(H0, hist)
        for s, y in hist[-1:]:
            np.testing.assert_allclose(H @ y, s, atol=1e-10 * np.linalg.norm(s))


def test_qn_records_skipped_pairs_and_inner_counts():
    sys = cubic_system()
    spec = NonlinearSolveSpec(method="qn_jaclow", rtol=1e-8, jaclow_inner_it=3,
                              linear=LinearSolveSpec(preconditioner="jacobi"))
    _, tr = solve(sys, spec, np.full(8, 0.5))
    assert tr.converged
    assert all(i <= 3 * 2 for i in tr.inner_iterations)
    assert tr.skipped_pairs >= 0


# NGMRES


def test_ngmres_m1_is_richardson():
    A = np.diag([0.5, 0.25, 0.75])
    b = np.array([1.0, -1.0, 0.5])
    sys = FunctionSystem(lambda x: A @ x - b, 3)
    x0 = np.zeros(3)
    x, tr = ngmres_solve(sys, NonlinearSolveSpec(method="ngmres", ngmres_m=1, max_it=5, rtol=0, atol=0), x0)
    y = x0.copy()
    for _ in range(5):
        y = y - (A @ y - b)
    np.testing.assert_allclose(x, y, rtol=1e-15)
    assert tr.iterations == 5


def test_mixing_weights_match_constrained_least_squares():
    rng = np.random.default_rng(4)
    n, k = 12, 4
    A = spd(n, 4)
    b = rng.standard_normal(n)
    X = rng.standard_normal((k + 1, n))
    F = X @ A.T - b
    w = mixing_weights(F[-1], list(F[:-1]))
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    # KKT oracle: minimize |F^T a| subject to sum a = 1
    G = F @ F.T
    kkt = np.block([[2 * G, np.ones((k + 1, 1))], [np.ones((1, k + 1)), np.zeros((1, 1))]])
    sol = np.linalg.solve(kkt, np.append(np.zeros(k + 1), 1.0))
    np.testing.assert_allclose(w, sol[:-1], rtol=1e-6, atol=1e-8)
    mixed = A @ (w @ X) - b
    assert np.linalg.norm(mixed) <= min(np.linalg.norm(F, axis=1)) + 1e-12


def test_mixing_weights_rank_deficient_window():
    f = np.array([1.0, 0.0])
    w = mixing_weights(f, [f.copy(), f.copy()])
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)


def test_ngmres_converges_on_contractive_affine():
    sys, A, b = affine_system(8, 2, lo=0.1, hi=1.5)
    x, tr = ngmres_solve(sys, NonlinearSolveSpec(method="ngmres", ngmres_m=10, rtol=1e-10), np.zeros(8))
    assert tr.converged
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)
    assert tr.info["last_weights"].sum() == pytest.approx(1.0)


# NCG


def test_ncg_beta_examples():
    g_old, g_new, p = np.array([1.0, 0.0]), np.array([0.0, 2.0]), np.array([-1.0, 0.0])
    assert ncg_beta("fr", g_new, g_old, p) == 4.0
    assert ncg_beta("prp", g_old, g_old, p) == 0.0
    assert ncg_beta("dy", g_new, g_old, p) == pytest.approx(4.0 / 1.0)
    assert ncg_beta("cd", g_new, g_old, p) == pytest.approx(4.0 / 1.0)
    assert ncg_beta("fr", g_new, np.zeros(2), p) is None
    with pytest.raises(ValueError):
        ncg_beta("hs", g_new, g_old, p)


def linear_cg_iterates(A, b, x0, k):
    x = x0.copy()
    r = b - A @ x
    p = r.copy()
    out = []
    for _ in range(k):
        Ap = A @ p
        a = (r @ r) / (p @ Ap)
        x = x + a * p
        r_new = r - a * Ap
        p = r_new + (r_new @ r_new) / (r @ r) * p
        r = r_new
        out.append(x.copy())
    return out


def test_ncg_fr_exact_line_search_equals_linear_cg():
    n = 30
    A = spd(n, 8, 1.0, 50.0)
    A = 0.5 * (A + A.T)
    b = np.random.default_rng(8).standard_normal(n)
    sys = FunctionSystem(lambda x: A @ x - b, n)
    exact = lambda x, p, g: -(g @ p) / (p @ A @ p)  # noqa: E731
    ref = linear_cg_iterates(A, b, np.zeros(n), 10)
    for k in range(1, 11):
        spec = NonlinearSolveSpec(method="ncg", ncg_beta="fr", max_it=k, rtol=0, atol=0)
        x, _ = ncg_solve(sys, spec, np.zeros(n), line_search=exact)
        assert np.linalg.norm(x - ref[k - 1]) <= 1e-10 * np.linalg.norm(ref[k - 1])


def test_ncg_restart_on_degenerate_beta():
    sys = FunctionSystem(lambda x: x - 1.0, 2)
    x, tr = ncg_solve(sys, NonlinearSolveSpec(method="ncg", ncg_beta="prp"), np.zeros(2))
    assert tr.converged and tr.iterations == 1
    # second residual is exactly zero: FR denominator fine, DY denominator -p.(g_new - g) nonzero
    np.testing.assert_allclose(x, 1.0)


@pytest.mark.parametrize("beta", ["fr", "prp", "dy", "cd"])
def test_ncg_converges_on_well_conditioned_quadratic(beta):
    sys, A, b = affine_system(8, 5, lo=0.4, hi=1.2)
    x, tr = ncg_solve(sys, NonlinearSolveSpec(method="ncg", ncg_beta=beta, rtol=1e-8, max_it=500), np.zeros(8))
    assert tr.converged


# dispatch, termination, determinism


def test_capability_error_without_jacobian():
    sys = FunctionSystem(lambda x: x, 2)
    for method in ("newton", "inewton", "qn_preonly", "qn_jaclow"):
        with pytest.raises(CapabilityError):
            solve(sys, NonlinearSolveSpec(method=method), np.zeros(2))


def test_capability_error_for_gmg_on_plain_system():
    sys, _, _ = affine_system()
    with pytest.raises(CapabilityError):
        solve(sys, NonlinearSolveSpec(linear=LinearSolveSpec(preconditioner="gmg")), np.zeros(6))


def test_function_system_shape_check():
    with pytest.raises(ValueError):
        FunctionSystem(lambda x: np.zeros(3), 2).residual(np.zeros(2))


@pytest.mark.parametrize("method", METHODS)
def test_max_it_zero_returns_x0(method):
    sys, _, _ = affine_system()
    x0 = np.arange(6.0)
    x, tr = solve(sys, NonlinearSolveSpec(method=method, max_it=0, linear=DIRECT), x0)
    np.testing.assert_array_equal(x, x0)
    assert not tr.converged and tr.reason == "max_it" and tr.residual_norms == [tr.residual_norms[0]]


@pytest.mark.parametrize("method", METHODS)
def test_trace_invariants_and_determinism(method):
    sys = cubic_system()
    spec = NonlinearSolveSpec(method=method, rtol=1e-8, max_it=400, linear=LinearSolveSpec(preconditioner="jacobi"))
    x0 = np.full(8, 0.3)
    x1, t1 = solve(sys, spec, x0)
    x2, t2 = solve(sys, spec, x0)
    assert np.array_equal(x1, x2)
    assert t1.residual_norms == t2.residual_norms and t1.inner_iterations == t2.inner_iterations
    assert t1.residual_norms[0] == np.linalg.norm(sys.residual(x0))
    assert t1.iterations <= spec.max_it
    if t1.converged:
        assert t1.final_norm <= max(spec.atol, spec.rtol * t1.residual_norms[0])


def test_stol_termination():
    sys = cubic_system()
    spec = NonlinearSolveSpec(rtol=0, atol=0, stol=1e-8, linear=DIRECT)
    _, tr = newton_solve(sys, spec, np.full(8, 2.0))
    assert tr.converged and tr.reason == "stol"


def test_nonfinite_residual_is_breakdown():
    sys = FunctionSystem(lambda x: x**3, 2)
    _, tr = ncg_solve(sys, NonlinearSolveSpec(method="ncg", max_it=50), np.full(2, 10.0))
    assert tr.reason == "breakdown" and not tr.converged


# Bidomain gauge across all methods


class GaugeProbe:
    def __init__(self, problem):
        self.p = problem
        self.size = problem.size
        self.linear_projector = problem.linear_projector
        self.worst = 0.0

    def residual(self, x):
        self.worst = max(self.worst, abs(x[self.p.n_nodes:].mean()))
        return self.p.residual(x)

    def jacobian(self, x):
        return self.p.jacobian(x)

    def project(self, x):
        return self.p.project(x)

    def preconditioner(self, J, kind):
        return self.p.preconditioner(J, kind)


@pytest.mark.parametrize("method", METHODS)
def test_bidomain_gauge_every_iterate(method):
    p = bidomain_step()
    probe = GaugeProbe(p)
    x0 = np.zeros(p.size)
    x0[p.n_nodes:] = 0.3
    x, tr = solve(probe, NonlinearSolveSpec(method=method), x0)
    assert tr.converged
    assert probe.worst <= 1e-10
    assert abs(x[p.n_nodes:].mean()) <= 1e-10


def test_bidomain_newton_quadratic_order():
    p = bidomain_step(8, 0.25)
    x, tr = newton_solve(p, NonlinearSolveSpec(rtol=1e-14, atol=1e-20, max_it=20,
                                               linear=LinearSolveSpec(rtol=1e-13, max_it=400)), np.zeros(p.size))
    assert tr.converged
    assert fitted_order(tr.residual_norms) >= 1.8


def test_fitted_order_oracles():
    quad = [1e-1 * (1e-1) ** (2**k - 1) for k in range(4)]
    assert fitted_order(quad) == pytest.approx(2.0, abs=1e-9)
    lin = [0.5**k for k in range(20)]
    assert fitted_order(lin) == pytest.approx(1.0, abs=1e-9)
    assert fitted_order([0.5 ** (3**k) for k in range(4)]) == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(ValueError):
        fitted_order([1.0, 1e-20, 1e-30])
