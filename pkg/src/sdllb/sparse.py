"""CSR matrices (scipy storage) and Jacobi-preconditioned BiCGStab."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    """BiCGStab failed to reach the requested relative residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message}: relative residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative, recomputed with an explicit product


def csr_from_triplets(rows, cols, vals, n: int) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise IndexError(f"triplet index out of range for dimension {n}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite triplet value")
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A @ x


def solve_bicgstab(
    A: sp.csr_matrix,
    b: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
) -> SolveResult:
    """Solve ``A x = b`` to ``||b - A x|| <= tol ||b||`` from a zero (or given) start."""
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), 0, 0.0)
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise SolverError("zero on the diagonal, Jacobi preconditioner undefined", np.inf, 0)
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    total = 0
    residual = np.inf
    # the recursive residual can drift from the true one; restart from the iterate when it does
    for _ in range(5):
        x, its = _bicgstab(A, b, x, inv_diag, tol * bnorm, maxiter - total)
        total += its
        residual = np.linalg.norm(b - spmv(A, x)) / bnorm
        if not np.isfinite(residual):
            raise SolverError("BiCGStab breakdown", np.inf, total)
        if residual <= tol:
            return SolveResult(x, total, float(residual))
        if total >= maxiter:
            break
    raise SolverError("BiCGStab did not converge", float(residual), total)


def _bicgstab(A, b, x, inv_diag, atol, maxiter):
    r = b - A @ x
    if np.linalg.norm(r) <= atol:
        return x, 0
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for it in range(1, maxiter + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0:
            return x, it
        p = r + (rho_new / rho) * (alpha / omega) * (p - omega * v)
        p_hat = inv_diag * p
        v = A @ p_hat
        denom = r_hat @ v
        if denom == 0.0:
            return x, it
        alpha = rho_new / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= atol:
            return x + alpha * p_hat, it
        s_hat = inv_diag * s
        t = A @ s_hat
        tt = t @ t
        omega = (t @ s) / tt if tt > 0.0 else 0.0
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        if np.linalg.norm(r) <= atol or omega == 0.0:
            return x, it
        rho = rho_new
    return x, maxiter
