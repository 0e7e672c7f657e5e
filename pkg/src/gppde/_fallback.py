"""Pure numpy/scipy versions of the compiled kernels in :mod:`gppde._core`."""
from __future__ import annotations

import heapq

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import spsolve_triangular
from scipy.spatial import cKDTree


def _row_dist(X: np.ndarray, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
    # accumulate squares coordinate by coordinate, as the compiled loop does
    diff = X[idx, 0] - x[0]
    s = diff * diff
    for k in range(1, X.shape[1]):
        diff = X[idx, k] - x[k]
        s = s + diff * diff
    return np.sqrt(s)


def maximin(X: np.ndarray, init_dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = X.shape[0]
    perm = np.empty(n, dtype=np.int64)
    lengths = np.empty(n, dtype=np.float64)
    if n == 0:
        return perm, lengths
    key = np.array(init_dist, dtype=np.float64, copy=True)
    selected = np.zeros(n, dtype=bool)
    tree = cKDTree(X)
    heap = [(-key[i], i) for i in range(n)]
    heapq.heapify(heap)
    q = 0
    while heap:
        negk, top = heapq.heappop(heap)
        if selected[top] or -negk != key[top]:
            continue
        selected[top] = True
        perm[q] = top
        lengths[q] = key[top]
        q += 1
        if q == n:
            break
        r = key[top] * (1.0 + 1e-9) + 1e-300
        if np.isfinite(r):
            cand = np.asarray(tree.query_ball_point(X[top], r), dtype=np.int64)
        else:
            cand = np.arange(n, dtype=np.int64)
        cand = cand[~selected[cand]]
        if cand.size == 0:
            continue
        dd = _row_dist(X, cand, X[top])
        closer = dd < key[cand]
        for j, dj in zip(cand[closer].tolist(), dd[closer].tolist()):
            key[j] = dj
            heapq.heappush(heap, (-dj, j))
    return perm, lengths


def _derivative(m: int, idx: list[int], t: np.ndarray, h: list[np.ndarray]) -> np.ndarray:
    if m == 0:
        return h[0]
    if m == 1:
        return h[1] * t[idx[0]]
    if m == 2:
        i, j = idx
        out = h[2] * t[i] * t[j]
        return out + h[1] if i == j else out
    if m == 3:
        i, j, k = idx
        lower = np.zeros_like(h[2])
        if i == j:
            lower = lower + t[k]
        if i == k:
            lower = lower + t[j]
        if j == k:
            lower = lower + t[i]
        return h[3] * t[i] * t[j] * t[k] + h[2] * lower
    i, j, k, l = idx
    pairs = np.zeros_like(h[3])
    for (p, q), (u, v) in (((i, j), (k, l)), ((i, k), (j, l)), ((i, l), (j, k)),
                           ((j, k), (i, l)), ((j, l), (i, k)), ((k, l), (i, j))):
        if p == q:
            pairs = pairs + t[u] * t[v]
    deltas = float((i == j and k == l) + (i == k and j == l) + (i == l and j == k))
    return h[4] * t[i] * t[j] * t[k] * t[l] + h[3] * pairs + h[2] * deltas


def kernel_block(xa, ca, xb, cb, qcoef, qoff, a, amp, z_tiny, op_dims, op_order, symmetric):
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    ca = np.asarray(ca, dtype=np.float64)
    cb = np.asarray(cb, dtype=np.float64)
    na, nb, d = xa.shape[0], xb.shape[0], xa.shape[1]
    out = np.zeros((na, nb))
    if na == 0 or nb == 0:
        return out
    t = [xa[:, k][:, None] - xb[:, k][None, :] for k in range(d)]
    r2 = t[0] * t[0]
    for k in range(1, d):
        r2 = r2 + t[k] * t[k]
    z = a * np.sqrt(r2)
    tiny = z < z_tiny
    zs = np.where(tiny, 1.0, z)
    e = np.exp(-zs)
    act_a = [al for al in range(ca.shape[1]) if np.any(ca[:, al] != 0.0)]
    act_b = [be for be in range(cb.shape[1]) if np.any(cb[:, be] != 0.0)]
    nmax = max(op_order[al] for al in act_a) + max(op_order[be] for be in act_b) if act_a and act_b else 0
    h = []
    scale = amp
    for n in range(nmax + 1):
        poly = np.zeros_like(zs)
        for kk in range(qcoef.shape[1]):
            c = qcoef[n, kk]
            if c != 0.0:
                poly = poly + c * zs ** float(kk - qoff)
        hn = scale * e * poly
        h0 = scale * qcoef[n, qoff] if n <= 2 else 0.0
        h.append(np.where(tiny, h0, hn))
        scale *= a * a
    h += [np.zeros_like(zs)] * (5 - len(h))
    t = [np.where(tiny, 0.0, tk) for tk in t]
    for al in act_a:
        for be in act_b:
            idx = [int(op_dims[al, m]) for m in range(op_order[al])]
            idx += [int(op_dims[be, m]) for m in range(op_order[be])]
            sgn = -1.0 if op_order[be] % 2 else 1.0
            val = _derivative(len(idx), idx, t, h)
            out += sgn * np.outer(ca[:, al], cb[:, be]) * val
    if symmetric:
        out = np.triu(out) + np.triu(out, 1).T
    return out


def upper_solve(indptr, indices, data, b, transposed):
    n = b.shape[0]
    U = csc_matrix((data, indices, indptr), shape=(n, n))
    diag = data[np.asarray(indptr[1:]) - 1]
    if np.any(diag == 0.0):
        raise ZeroDivisionError(f"zero diagonal in column {int(np.flatnonzero(diag == 0.0)[0])}")
    if transposed:
        return spsolve_triangular(U.T.tocsr(), b, lower=True)
    return spsolve_triangular(U.tocsr(), b, lower=False)
