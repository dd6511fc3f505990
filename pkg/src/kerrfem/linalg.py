"""Minimal sparse linear algebra used by assembly and the time steppers.

Storage and factorizations are delegated to scipy.sparse; the conjugate
gradient loop is written out here because callers need to distinguish an
indefinite operator (breakdown) from a slow one (non-convergence), which the
library solvers do not report.  Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinalgError(Exception):
    pass


class CgBreakdownError(LinalgError):
    """Negative curvature encountered: the operator is not positive definite."""


class CgNonConvergenceError(LinalgError):
    """Iteration cap reached before the residual tolerance."""


class SaddleSolveError(LinalgError):
    """Saddle-point solve failed or left a large residual."""


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed-row real sparse matrix.

    Column indices are sorted and unique within each row.  Immutable after
    construction; matrix-vector products are safe to run concurrently.
    """

    csr: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ np.asarray(x, dtype=np.float64)

    def __matmul__(self, x):
        if isinstance(x, SparseMatrix):
            return SparseMatrix(csr=(self.csr @ x.csr).tocsr())
        return self.matvec(x)

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(csr=self.csr.T.tocsr())

    @property
    def T(self) -> "SparseMatrix":
        return self.transpose()

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()


def from_csr(csr) -> SparseMatrix:
    csr = sp.csr_matrix(csr)
    csr.sum_duplicates()
    csr.sort_indices()
    return SparseMatrix(csr=csr)


def from_triplets(rows, cols, values, shape) -> SparseMatrix:
    """Build a SparseMatrix from COO triplets, summing duplicates."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    nr, nc = shape
    if rows.size and (rows.min() < 0 or rows.max() >= nr):
        raise LinalgError("row index out of range")
    if cols.size and (cols.min() < 0 or cols.max() >= nc):
        raise LinalgError("column index out of range")
    coo = sp.coo_matrix((values, (rows, cols)), shape=shape)
    return from_csr(coo.tocsr())


def cg_solve(A: SparseMatrix, b: np.ndarray, rel_tol: float = 1e-11,
             x0: np.ndarray | None = None, max_iter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Returns x with ||Ax - b|| <= rel_tol * ||b||.  Raises CgBreakdownError on
    negative curvature (non-SPD operator) and CgNonConvergenceError when the
    iteration cap (10 n by default) is exhausted.
    """
    if not (0.0 < rel_tol < 1.0):
        raise LinalgError(f"rel_tol must be in (0, 1), got {rel_tol}")
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise LinalgError(f"matrix is not square: {A.shape}")
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    inv_diag = np.where(np.abs(diag) > 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    r = b - A.matvec(x)
    if np.linalg.norm(r) <= rel_tol * bnorm:
        return x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    cap = 10 * n if max_iter is None else max_iter
    for _ in range(cap):
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise CgBreakdownError(
                f"negative curvature p^T A p = {pAp:.3e}; matrix not positive definite"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rel_tol * bnorm:
            return x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CgNonConvergenceError(
        f"no convergence in {cap} iterations; residual "
        f"{np.linalg.norm(r) / bnorm:.3e} of ||b||"
    )


def factorized(A: SparseMatrix):
    """Cached sparse LU solve function for repeated right-hand sides."""
    lu = spla.splu(A.csr.tocsc())
    return lu.solve


def solve_saddle(A: SparseMatrix, B: SparseMatrix, f: np.ndarray, g: np.ndarray,
                 rel_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Solve the saddle system  [A B^T; B 0] [u; p] = [f; g].

    A is symmetric positive semidefinite, B has full row rank after gauge
    fixing.  The full indefinite block matrix is assembled and solved by a
    sparse direct factorization (appropriate at the ~1e5-dof scale this
    package targets); residuals of both block equations are verified against
    rel_tol before returning.
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    nu = A.shape[0]
    npp = B.shape[0]
    if B.shape != (npp, nu) and npp > 0:
        raise LinalgError(f"B shape {B.shape} incompatible with A {A.shape}")
    if npp == 0:
        return cg_solve(A, f, rel_tol=min(rel_tol, 1e-11)), np.zeros(0)
    K = sp.bmat([[A.csr, B.csr.T], [B.csr, None]], format="csc")
    try:
        lu = spla.splu(K)
        sol = lu.solve(np.concatenate([f, g]))
    except RuntimeError as exc:
        raise SaddleSolveError(f"sparse factorization failed: {exc}") from exc
    u, p = sol[:nu], sol[nu:]
    scale = max(np.linalg.norm(f), np.linalg.norm(g), 1e-30)
    res1 = np.linalg.norm(A.matvec(u) + B.csr.T @ p - f)
    res2 = np.linalg.norm(B.matvec(u) - g)
    if max(res1, res2) > rel_tol * scale:
        raise SaddleSolveError(
            f"saddle residuals ({res1:.3e}, {res2:.3e}) exceed "
            f"{rel_tol:.1e} * {scale:.3e}"
        )
    return u, p
