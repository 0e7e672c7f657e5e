"""Sparse inverse-Cholesky factors of kernel matrices by KL minimization.

Positions refer to the ordered measurements: position ``q`` holds measurement
``perm[q]``.  The factor ``U`` is upper triangular with ``Theta^{-1} ~ U U^T``
in ordered coordinates.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial import cKDTree

from .geometry import Ordering, row_dist
from .kernels import MaternKernel

KL_DENSE_LIMIT = 4096
_QUERY_CHUNK = 4096


class FactorizationError(RuntimeError):
    """A supernode block was not numerically positive definite."""

    def __init__(self, message: str, supernode: int | None = None):
        super().__init__(message)
        self.supernode = supernode


@dataclass(eq=False)
class SparsityPattern:
    """Column index sets in CSC form: rows of column ``j`` are ``indices[indptr[j]:indptr[j+1]]``."""

    indptr: np.ndarray
    indices: np.ndarray
    rho: float

    @property
    def N(self) -> int:
        return len(self.indptr) - 1

    def column(self, j: int) -> np.ndarray:
        return self.indices[self.indptr[j]:self.indptr[j + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def nnz(self) -> int:
        return int(self.indptr[-1])


@dataclass(eq=False)
class SupernodeSet:
    groups: list[np.ndarray]
    children: list[np.ndarray]
    lam: float

    def __len__(self) -> int:
        return len(self.groups)


@dataclass(eq=False)
class SparseUpperFactor:
    """Upper-triangular CSC factor over ordered positions plus the ordering it lives in."""

    U: sp.csc_matrix
    perm: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.U.shape[0]

    def diagonal(self) -> np.ndarray:
        return self.U.data[self.U.indptr[1:] - 1]

    def to_dense(self) -> np.ndarray:
        return self.U.toarray()

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.U.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return coo.row[order], coo.col[order], coo.data[order]

    def export_triplets(self, path) -> None:
        """Write ``row col value`` lines (ordered positions, 17 significant digits)."""
        rows, cols, vals = self.triplets()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
                fh.write(f"{r} {c} {v:.17g}\n")


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not rho > 0:
        raise ValueError("rho must be positive")
    return rho


def build_pattern(ordering: Ordering, X: np.ndarray, rho: float) -> SparsityPattern:
    """``s_j = {i <= j : dist(x_P(i), x_P(j)) <= rho * l_j}`` with ``X`` the base point of each measurement."""
    rho = _check_rho(rho)
    Xo = np.ascontiguousarray(np.asarray(X, dtype=np.float64)[ordering.perm])
    L = np.asarray(ordering.lengthscales, dtype=np.float64)
    N = Xo.shape[0]
    if not math.isfinite(rho) or not np.all(np.isfinite(L)):
        if N > 20000:
            raise ValueError("unbounded pattern requested for a large problem")
        indptr = np.concatenate([[0], np.cumsum(np.arange(1, N + 1))]).astype(np.int64)
        indices = np.concatenate([np.arange(j + 1) for j in range(N)]).astype(np.int64)
        return SparsityPattern(indptr, indices, rho)

    rows_all, cols_all = [], []
    lo = 0
    while lo < N:
        hi = min(N, max(1, 2 * lo))
        tree = cKDTree(Xo[:hi])
        for start in range(lo, hi, _QUERY_CHUNK):
            js = np.arange(start, min(hi, start + _QUERY_CHUNK))
            radius = rho * L[js]
            hits = tree.query_ball_point(Xo[js], radius * (1.0 + 1e-9) + 1e-300)
            counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
            rows = np.fromiter(itertools.chain.from_iterable(hits), dtype=np.int64, count=int(counts.sum()))
            cols = np.repeat(js, counts)
            keep = rows <= cols
            rows, cols = rows[keep], cols[keep]
            keep = row_dist(Xo[rows], Xo[cols]) <= rho * L[cols]
            rows_all.append(rows[keep])
            cols_all.append(cols[keep])
        lo = hi
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(cols, minlength=N))]).astype(np.int64)
    return SparsityPattern(indptr, rows.astype(np.int64), rho)


def aggregate_supernodes(pattern: SparsityPattern, ordering: Ordering, lam: float = 1.5) -> SupernodeSet:
    """Greedy grouping from the last position backwards.

    The last unassigned position ``j`` collects every unassigned ``i`` in its
    column with ``l_i <= lam * l_j``; the group's children are the union of
    the members' columns.
    """
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    L = np.asarray(ordering.lengthscales, dtype=np.float64)
    N = pattern.N
    assigned = np.zeros(N, dtype=bool)
    groups, children = [], []
    for j in range(N - 1, -1, -1):
        if assigned[j]:
            continue
        cand = pattern.column(j)
        members = cand[~assigned[cand] & (L[cand] <= lam * L[j])]
        assigned[members] = True
        groups.append(members)
        if members.size == 1:
            children.append(pattern.column(int(members[0])).copy())
        else:
            children.append(np.unique(np.concatenate([pattern.column(int(i)) for i in members])))
    return SupernodeSet(groups, children, float(lam))


def singleton_supernodes(pattern: SparsityPattern) -> SupernodeSet:
    """No aggregation: every column is its own group with its own pattern."""
    groups = [np.array([j], dtype=np.int64) for j in range(pattern.N)]
    children = [pattern.column(j).copy() for j in range(pattern.N)]
    return SupernodeSet(groups, children, math.inf)


def _factor_supernode(kernel: MaternKernel, Xo: np.ndarray, Co: np.ndarray, members: np.ndarray,
                      idx: np.ndarray, sid: int):
    theta = kernel.block(Xo[idx], Co[idx], Xo[idx], Co[idx], symmetric=True)
    try:
        L = cholesky(theta, lower=True, check_finite=False)
    except LinAlgError:
        jitter = 1e-12 * float(np.max(np.diag(theta)))
        try:
            L = cholesky(theta + jitter * np.eye(idx.size), lower=True, check_finite=False)
        except LinAlgError as exc:
            raise FactorizationError(f"supernode {sid} block is not positive definite", sid) from exc
    if not np.all(np.isfinite(L)):
        raise FactorizationError(f"supernode {sid} produced a non-finite Cholesky factor", sid)
    ks = np.searchsorted(idx, members)
    rhs = np.zeros((idx.size, members.size))
    rhs[ks, np.arange(members.size)] = 1.0
    # L^T y = e_k; back substitution leaves y zero below k, so y is the prefix solution
    Y = solve_triangular(L, rhs, lower=True, trans="T", check_finite=False)
    r, c = np.nonzero(np.arange(idx.size)[:, None] <= ks[None, :])
    return idx[r], members[c], Y[r, c]


def kl_factorize(kernel: MaternKernel, X: np.ndarray, C: np.ndarray, ordering: Ordering,
                 supernodes: SupernodeSet, workers: int = 1) -> SparseUpperFactor:
    """KL-optimal sparse factor; every supernode gets one dense Cholesky reused by all members.

    ``X`` and ``C`` give base points and operator weights in measurement order.
    """
    perm = np.asarray(ordering.perm)
    Xo = np.ascontiguousarray(np.asarray(X, dtype=np.float64)[perm])
    Co = np.ascontiguousarray(np.asarray(C, dtype=np.float64)[perm])
    N = Xo.shape[0]
    jobs = list(enumerate(zip(supernodes.groups, supernodes.children)))

    def work(job):
        sid, (members, idx) = job
        return _factor_supernode(kernel, Xo, Co, members, idx, sid)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, jobs))
    else:
        parts = [work(job) for job in jobs]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    U = sp.csc_matrix((vals, (rows, cols)), shape=(N, N))
    U.sort_indices()
    stats = {
        "supernodes": len(supernodes),
        "nnz": int(U.nnz),
        "max_children": int(max(c.size for c in supernodes.children)),
    }
    return SparseUpperFactor(U, perm.copy(), stats)


def factorize(kernel: MaternKernel, X: np.ndarray, C: np.ndarray, ordering: Ordering, rho: float,
              lam: float = 1.5, workers: int = 1) -> SparseUpperFactor:
    """Pattern, supernodes and factor in one call."""
    pattern = build_pattern(ordering, X, rho)
    sn = aggregate_supernodes(pattern, ordering, lam)
    factor = kl_factorize(kernel, X, C, ordering, sn, workers=workers)
    factor.stats["pattern_nnz"] = pattern.nnz()
    factor.stats["max_column"] = int(pattern.sizes().max())
    return factor


def dense_inverse_cholesky(theta: np.ndarray) -> np.ndarray:
    """Upper-triangular ``U`` with positive diagonal and ``U U^T = theta^{-1}``."""
    theta = np.asarray(theta, dtype=np.float64)
    try:
        L = cholesky(theta, lower=True)
    except LinAlgError as exc:
        raise FactorizationError("matrix is not positive definite") from exc
    return solve_triangular(L, np.eye(theta.shape[0]), lower=True, trans="T")


def kl_divergence(theta: np.ndarray, U, perm: np.ndarray | None = None) -> float:
    """``0.5 * (-logdet(U^T Theta U) + tr(U^T Theta U) - N)`` for ``Theta`` in measurement order.

    Evaluated through ``B = L^T U`` (``Theta = L L^T`` in ordered coordinates),
    which is upper triangular, so every term is a nonnegative sum.
    """
    if isinstance(U, SparseUpperFactor):
        perm = U.perm if perm is None else perm
        U = U.to_dense()
    theta = np.asarray(theta, dtype=np.float64)
    N = theta.shape[0]
    if N > KL_DENSE_LIMIT:
        raise ValueError(f"KL diagnostic is limited to N <= {KL_DENSE_LIMIT}")
    if perm is not None:
        theta = theta[np.ix_(perm, perm)]
    try:
        L = cholesky(theta, lower=True)
    except LinAlgError as exc:
        raise FactorizationError("kernel matrix is not positive definite") from exc
    B = np.triu(L.T @ np.asarray(U, dtype=np.float64))
    s = np.diag(B) ** 2 - 1.0
    if np.any(s <= -1.0):
        raise ValueError("factor has a zero diagonal")
    off = np.triu(B, 1)
    return float(0.5 * (np.sum(s - np.log1p(s)) + np.sum(off * off)))
