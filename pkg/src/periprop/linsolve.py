"""Sparse linear algebra and the Newton driver.

Direct sparse LU is the desk-scale workhorse; factorizations are cached on
the system object so repeated solves with the same matrix are bit-identical.
GMRES with ILU(0) or a full factorization as preconditioner is provided for
larger systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Linear or nonlinear solver failure."""


class NewtonDivergenceError(SolverError):
    """Residual grew over three consecutive Newton steps."""


@dataclass
class SparseSystem:
    """Square sparse system with an optional cached LU factorization."""

    matrix: sp.spmatrix
    rhs: np.ndarray
    _factor: object = field(default=None, repr=False)

    def factorization(self):
        if self._factor is None:
            self._factor = factorize(self.matrix)
        return self._factor


def factorize(matrix: sp.spmatrix):
    """Sparse LU factorization; singular matrices raise SolverError with the
    pivot location scipy reports."""
    try:
        return spla.splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:  # scipy reports "Factor is exactly singular" etc.
        raise SolverError(f"sparse LU failed: {exc}") from exc


def solve_direct(system: SparseSystem) -> np.ndarray:
    """Direct solve with cached factorization and a residual guard."""
    x = system.factorization().solve(system.rhs)
    bnorm = np.linalg.norm(system.rhs)
    if bnorm > 0:
        res = np.linalg.norm(system.matrix @ x - system.rhs) / bnorm
        if res > 1e-10:
            raise SolverError(f"direct solve residual {res:.3e} exceeds 1e-10")
    return x


def _ilu0(matrix: sp.spmatrix):
    # zero fill-in, no dropping: the ILU(0) pattern of the original matrix
    return spla.spilu(sp.csc_matrix(matrix), drop_tol=0.0, fill_factor=1.0)


def solve_gmres(
    system: SparseSystem,
    preconditioner=None,
    restart: int = 100,
    tol: float = 1e-10,
    maxiter: int = 500,
):
    """GMRES solve; returns (x, info) with info = {iterations, converged}.

    preconditioner: None, the string 'ilu0', or an object with a .solve
    method (e.g. a cached LU factorization).
    """
    A = system.matrix.tocsr()
    n = A.shape[0]
    if preconditioner is None:
        M = None
    elif preconditioner == "ilu0":
        ilu = _ilu0(A)
        M = spla.LinearOperator((n, n), matvec=ilu.solve)
    elif hasattr(preconditioner, "solve"):
        M = spla.LinearOperator((n, n), matvec=preconditioner.solve)
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    count = {"n": 0}

    def cb(_):
        count["n"] += 1

    x, info = spla.gmres(
        A, system.rhs, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter, M=M, callback=cb, callback_type="pr_norm"
    )
    result = {"iterations": count["n"], "converged": info == 0}
    if info > 0:
        result["flag"] = "max-iterations"
    return x, result


def finite_difference_jacobian_error(residual, jac_matrix, x: np.ndarray, eps: float = 1e-7) -> float:
    """Relative error of jac_matrix against a directional finite difference.

    Deterministic probe direction; used as the consistency check promised by
    the Newton driver contract.
    """
    direction = np.cos(np.arange(len(x), dtype=float))
    direction /= np.linalg.norm(direction)
    scale = max(1.0, float(np.linalg.norm(x)))
    fd = (residual(x + eps * scale * direction) - residual(x - eps * scale * direction)) / (2 * eps * scale)
    jd = jac_matrix @ direction
    denom = max(np.linalg.norm(jd), 1e-30)
    return float(np.linalg.norm(fd - jd) / denom)


def newton(residual, jacobian, x0: np.ndarray, tol: float = 1e-10, maxit: int = 25, fd_probe: bool = False):
    """Newton iteration with a halving backtracking guard.

    residual(x) -> vector, jacobian(x) -> sparse matrix (or an object with a
    .solve method for a preassembled factorization).  Returns (x, trace) with
    trace the residual-norm history.  Raises NewtonDivergenceError when the
    norm grows over three consecutive steps, SolverError on maxit.
    """
    x = x0.copy()
    r = residual(x)
    trace = [float(np.linalg.norm(r))]
    grew = 0
    for _ in range(maxit):
        if trace[-1] <= tol:
            return x, trace
        J = jacobian(x)
        if fd_probe:
            err = finite_difference_jacobian_error(residual, J, x)
            if err > 1e-6:
                raise SolverError(f"Jacobian inconsistent with finite differences: {err:.3e}")
        if hasattr(J, "solve"):
            dx = J.solve(-r)
        else:
            dx = solve_direct(SparseSystem(J, -r))
        step = 1.0
        for _ in range(8):
            x_new = x + step * dx
            r_new = residual(x_new)
            if np.linalg.norm(r_new) < trace[-1] or trace[-1] <= tol:
                break
            step *= 0.5
        x, r = x_new, r_new
        norm = float(np.linalg.norm(r))
        grew = grew + 1 if norm > trace[-1] else 0
        trace.append(norm)
        if grew >= 3:
            raise NewtonDivergenceError(f"residual grew 3 consecutive steps: {trace[-4:]}")
    if trace[-1] > tol:
        raise SolverError(f"Newton did not reach {tol:.1e} in {maxit} iterations (last {trace[-1]:.3e})")
    return x, trace
