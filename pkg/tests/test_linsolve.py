"""Sparse solves, GMRES, and the Newton driver."""

import numpy as np
import pytest
import scipy.sparse as sp

from periprop.linsolve import (
    NewtonDivergenceError,
    SolverError,
    SparseSystem,
    factorize,
    finite_difference_jacobian_error,
    newton,
    solve_direct,
    solve_gmres,
)


def laplacian_1d(n: int) -> sp.csr_matrix:
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def test_direct_solve_and_cached_factorization():
    A = laplacian_1d(50)
    x_ref = np.sin(np.arange(50) * 0.3)
    sys1 = SparseSystem(A, A @ x_ref)
    x = solve_direct(sys1)
    assert np.linalg.norm(x - x_ref) < 1e-10
    assert sys1.factorization() is sys1.factorization()
    # repeated solves through the cached factorization are bit-identical
    assert np.array_equal(solve_direct(sys1), x)


def test_factorize_singular_raises():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SolverError, match="LU failed"):
        factorize(A)


def test_gmres_matches_direct():
    A = laplacian_1d(120)
    b = np.cos(np.arange(120) * 0.05)
    direct = solve_direct(SparseSystem(A, b))
    for precond in (None, "ilu0", factorize(A)):
        x, info = solve_gmres(SparseSystem(A, b), preconditioner=precond, tol=1e-12)
        assert info["converged"], info
        assert np.linalg.norm(x - direct) < 1e-8
    # a full factorization as preconditioner converges in one or two sweeps
    _, info = solve_gmres(SparseSystem(A, b), preconditioner=factorize(A))
    assert info["iterations"] <= 3


def test_gmres_unknown_preconditioner():
    A = laplacian_1d(10)
    with pytest.raises(ValueError, match="preconditioner"):
        solve_gmres(SparseSystem(A, np.ones(10)), preconditioner="jacobi")


def _quadratic_problem():
    # residual of a convex algebraic system with known root at x = 1
    def residual(x):
        return x**3 - np.ones_like(x)

    def jacobian(x):
        return sp.diags(3.0 * x**2).tocsr()

    return residual, jacobian


def test_newton_converges_quadratically():
    residual, jacobian = _quadratic_problem()
    x0 = np.full(6, 2.0)
    x, trace = newton(residual, jacobian, x0, tol=1e-12, fd_probe=True)
    assert np.linalg.norm(x - 1.0) < 1e-10
    # quadratic tail: each digit count roughly doubles
    tail = [t for t in trace if 1e-13 < t < 1e-2]
    for a, b in zip(tail, tail[1:]):
        assert b < 0.3 * a


def test_newton_divergence_detected():
    # gradient pathology: the residual grows whatever the step halving does
    def residual(x):
        return np.array([np.exp(x[0]) + 1.0])

    def jacobian(x):
        return sp.csr_matrix(np.array([[np.exp(x[0])]]))

    with pytest.raises((NewtonDivergenceError, SolverError)):
        newton(residual, jacobian, np.array([0.0]), tol=1e-14, maxit=12)


def test_fd_probe_catches_wrong_jacobian():
    residual, _ = _quadratic_problem()

    def wrong_jacobian(x):
        return sp.diags(2.9 * x**2).tocsr()

    with pytest.raises(SolverError, match="finite differences"):
        newton(residual, wrong_jacobian, np.full(4, 2.0), fd_probe=True)


def test_fd_jacobian_error_scale():
    residual, jacobian = _quadratic_problem()
    x = np.linspace(0.5, 1.5, 8)
    err = finite_difference_jacobian_error(residual, jacobian(x), x)
    assert err < 1e-8
    err_bad = finite_difference_jacobian_error(residual, 1.05 * jacobian(x), x)
    assert err_bad > 1e-3
