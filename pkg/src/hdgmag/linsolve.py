"""Dense and sparse linear solves with independent residual reporting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

__all__ = [
    "SingularMatrixError",
    "SolverError",
    "SparseMatrix",
    "SolveOptions",
    "SolveReport",
    "dense_lu_solve",
    "sparse_solve",
]


class SingularMatrixError(Exception):
    """Matrix is singular to the pivot tolerance."""


class SolverError(Exception):
    """The linear solver failed or did not reach the requested residual."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SparseMatrix:
    """Compressed-row matrix; sorted unique columns, no explicit zeros."""

    csr: scipy.sparse.csr_matrix

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        mat = scipy.sparse.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        mat.sort_indices()
        return cls(csr=mat)

    @property
    def shape(self):
        return self.csr.shape

    @property
    def nnz(self):
        return self.csr.nnz

    def matvec(self, x):
        return self.csr @ x


@dataclass
class SolveOptions:
    method: str = "direct"  # "direct" or "gmres"
    tol: float = 1e-10
    maxiter: int = 2000
    restart: int = 200


@dataclass
class SolveReport:
    method: str
    residual: float
    iterations: int = 0
    factor_nnz: int = 0


PIVOT_TOL = 1e-14


def dense_lu_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense LU with partial pivoting; raises on singularity."""
    matrix = np.asarray(matrix, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if not np.isfinite(matrix).all() or not np.isfinite(rhs).all():
        raise ValueError("matrix and rhs must be finite")
    lu, piv = scipy.linalg.lu_factor(matrix)
    diag = np.abs(np.diag(lu))
    scale = np.abs(matrix).max(axis=1)
    if (diag <= PIVOT_TOL * max(scale.max(), 1.0)).any():
        raise SingularMatrixError("pivot below tolerance in dense LU")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def _relative_residual(mat, x, b) -> float:
    num = np.linalg.norm(mat @ x - b)
    den = np.linalg.norm(b)
    return float(num / den) if den > 0 else float(num)


def sparse_solve(matrix: SparseMatrix, rhs: np.ndarray,
                 options: Optional[SolveOptions] = None):
    """Solve the condensed trace system.

    Default is a sparse direct LU (deterministic); the GMRES path with an
    ILU preconditioner serves larger 3D runs.  Either path must reach the
    requested relative residual or a SolverError is raised.
    """
    options = options or SolveOptions()
    csr = matrix.csr
    rhs = np.asarray(rhs, dtype=float)
    if csr.shape[0] != csr.shape[1] or csr.shape[0] != rhs.shape[0]:
        raise ValueError("system dimensions are inconsistent")

    if options.method == "direct":
        try:
            lu = scipy.sparse.linalg.splu(csr.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
        x = lu.solve(rhs)
        report = SolveReport(
            method="direct",
            residual=_relative_residual(csr, x, rhs),
            factor_nnz=int(lu.L.nnz + lu.U.nnz),
        )
    elif options.method == "gmres":
        try:
            ilu = scipy.sparse.linalg.spilu(csr.tocsc(), drop_tol=1e-6, fill_factor=20)
            precond = scipy.sparse.linalg.LinearOperator(csr.shape, ilu.solve)
        except RuntimeError:
            precond = None
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        x, info = scipy.sparse.linalg.gmres(
            csr, rhs, rtol=options.tol * 1e-2, atol=0.0, restart=options.restart,
            maxiter=options.maxiter, M=precond, callback=count,
            callback_type="legacy",
        )
        report = SolveReport(
            method="gmres",
            residual=_relative_residual(csr, x, rhs),
            iterations=iters,
        )
        if info != 0:
            raise SolverError(f"GMRES did not converge (info={info})", report)
    else:
        raise ValueError(f"unknown solver method {options.method!r}")

    if not np.isfinite(x).all():
        raise SolverError("solver produced non-finite values", report)
    if report.residual > options.tol:
        raise SolverError(
            f"solver residual {report.residual:.3e} above tolerance {options.tol:.1e}",
            report,
        )
    return x, report
