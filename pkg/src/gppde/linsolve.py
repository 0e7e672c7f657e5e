"""Sparse triangular solves, factor-based covariance/precision operators, and preconditioned CG."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import _backend
from .factorization import SparseUpperFactor

DEFAULT_TOL = 2.0 ** -26


def default_maxit(n: int) -> int:
    return int(10 * math.sqrt(n) + 100)


def _csc_arrays(U: sp.csc_matrix):
    return (np.ascontiguousarray(U.indptr, dtype=np.int64), np.ascontiguousarray(U.indices, dtype=np.int64),
            np.ascontiguousarray(U.data, dtype=np.float64))


def triangular_solve(U, b: np.ndarray, transposed: bool = False) -> np.ndarray:
    """Solve ``U x = b`` (or ``U^T x = b``) for upper-triangular CSC ``U`` with sorted indices."""
    if isinstance(U, SparseUpperFactor):
        U = U.U
    U = sp.csc_matrix(U)
    U.sort_indices()
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.shape[0] != U.shape[0]:
        raise ValueError("right-hand side length does not match the factor")
    indptr, indices, data = _csc_arrays(U)
    last = indptr[1:] - 1
    if np.any(np.diff(indptr) == 0) or np.any(indices[last] != np.arange(U.shape[0])):
        raise ZeroDivisionError("factor is missing diagonal entries")
    return np.asarray(_backend.active().upper_solve(indptr, indices, data, b, bool(transposed)))


def apply_precision(factor: SparseUpperFactor, v: np.ndarray) -> np.ndarray:
    """``P^T U U^T P v``: the approximate inverse kernel matrix times ``v``."""
    w = np.asarray(v, dtype=np.float64)[factor.perm]
    w = factor.U @ (factor.U.T @ w)
    out = np.empty_like(w)
    out[factor.perm] = w
    return out


def apply_covariance(factor: SparseUpperFactor, v: np.ndarray) -> np.ndarray:
    """``(P^T U U^T P)^{-1} v``: the approximate kernel matrix times ``v``."""
    w = np.asarray(v, dtype=np.float64)[factor.perm]
    y = triangular_solve(factor.U, w, transposed=False)
    z = triangular_solve(factor.U, y, transposed=True)
    out = np.empty_like(z)
    out[factor.perm] = z
    return out


def precision_operator(factor: SparseUpperFactor) -> LinearOperator:
    n = factor.N
    return LinearOperator((n, n), matvec=lambda v: apply_precision(factor, np.ravel(v)), dtype=np.float64)


def covariance_operator(factor: SparseUpperFactor) -> LinearOperator:
    n = factor.N
    return LinearOperator((n, n), matvec=lambda v: apply_covariance(factor, np.ravel(v)), dtype=np.float64)


def reduced_operator(jac, cov) -> LinearOperator:
    """``v -> DF cov(DF^T v)``; ``cov`` is a dense matrix, a LinearOperator, or a callable."""
    J = sp.csr_matrix(jac)
    if callable(cov) and not isinstance(cov, LinearOperator):
        apply = cov
    elif isinstance(cov, LinearOperator):
        apply = cov.matvec
    else:
        dense = np.asarray(cov)
        apply = dense.__matmul__
    JT = J.T.tocsr()
    m = J.shape[0]
    return LinearOperator((m, m), matvec=lambda v: J @ apply(JT @ np.ravel(v)), dtype=np.float64)


@dataclass
class PcgReport:
    iterations: int = 0
    relative_residuals: list[float] = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False


def _as_apply(op) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return lambda v: v.copy()
    if isinstance(op, LinearOperator):
        return op.matvec
    if callable(op):
        return op
    mat = op
    return lambda v: np.asarray(mat @ v).ravel()


def pcg(A, M_inv, b: np.ndarray, tol: float = DEFAULT_TOL, maxit: int | None = None,
        x0: np.ndarray | None = None) -> tuple[np.ndarray, PcgReport]:
    """Preconditioned conjugate gradients stopping on ``||b - A x|| / ||b|| <= tol``.

    Nonpositive curvature stops the iteration and sets ``report.breakdown``.
    Convergence is confirmed on the true residual before returning.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    apply_A = _as_apply(A)
    apply_M = _as_apply(M_inv)
    b = np.asarray(b, dtype=np.float64).ravel()
    n = b.size
    maxit = default_maxit(n) if maxit is None else int(maxit)
    report = PcgReport()
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        report.relative_residuals.append(0.0)
        report.converged = True
        return np.zeros(n), report
    r = b - apply_A(x) if x0 is not None else b.copy()
    rel = float(np.linalg.norm(r)) / bnorm
    report.relative_residuals.append(rel)
    if rel <= tol:
        report.converged = True
        return x, report
    z = apply_M(r)
    p = z.copy()
    rz = float(r @ z)
    while report.iterations < maxit:
        Ap = apply_A(p)
        curv = float(p @ Ap)
        if not curv > 0 or not math.isfinite(curv):
            report.breakdown = True
            break
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        report.iterations += 1
        rel = float(np.linalg.norm(r)) / bnorm
        if rel <= tol:
            r = b - apply_A(x)
            rel = float(np.linalg.norm(r)) / bnorm
            if rel <= tol:
                report.relative_residuals.append(rel)
                report.converged = True
                break
        report.relative_residuals.append(rel)
        z = apply_M(r)
        rz_new = float(r @ z)
        if not rz_new > 0:
            report.breakdown = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, report
