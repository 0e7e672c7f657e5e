# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: maximin ordering, kernel blocks, sparse triangular solves.

Every routine here has a numpy/scipy twin in :mod:`gppde._fallback` with the
same signature and (for the ordering) bit-identical output.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, floor, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF MAXDIM = 8
DEF MAXW = 16
DEF MAXP = 64


# ----------------------------------------------------------------------------
# maximin ordering
# ----------------------------------------------------------------------------

cdef inline bint _above(const double* key, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    # heap priority: larger key first, ties to the smaller index
    return key[a] > key[b] or (key[a] == key[b] and a < b)


cdef void _sift_down(Py_ssize_t* heap, Py_ssize_t* pos, const double* key,
                     Py_ssize_t size, Py_ssize_t start) noexcept nogil:
    cdef Py_ssize_t i = start, c, best, item = heap[start]
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        best = c
        if c + 1 < size and _above(key, heap[c + 1], heap[c]):
            best = c + 1
        if _above(key, heap[best], item):
            heap[i] = heap[best]
            pos[heap[i]] = i
            i = best
        else:
            break
    heap[i] = item
    pos[item] = i


cdef inline double _dist(const double* X, Py_ssize_t d, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double s = 0.0, t
    cdef Py_ssize_t k
    for k in range(d):
        t = X[i * d + k] - X[j * d + k]
        s = s + t * t
    return sqrt(s)


def maximin(double[:, ::1] X, double[::1] init_dist):
    """Maximin ordering of the rows of ``X`` given initial distances to a conditioning set.

    Returns ``(perm, lengths)``; ``lengths[q]`` is the distance of point
    ``perm[q]`` to the conditioning set and the previously selected points
    (``inf`` while nothing constrains it).
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    if d > MAXDIM:
        raise ValueError("dimension too large for the compiled ordering")
    perm_arr = np.empty(n, dtype=np.int64)
    len_arr = np.empty(n, dtype=np.float64)
    if n == 0:
        return perm_arr, len_arr
    cdef cnp.int64_t[::1] perm = perm_arr
    cdef double[::1] lengths = len_arr
    key_arr = np.array(init_dist, dtype=np.float64, copy=True)
    cdef double[::1] key = key_arr
    cdef const double* Xp = &X[0, 0]

    # uniform cell grid over the bounding box
    cdef double lo[MAXDIM]
    cdef double hi[MAXDIM]
    cdef Py_ssize_t ncell[MAXDIM]
    cdef Py_ssize_t stride[MAXDIM]
    cdef Py_ssize_t k, i, j, q
    for k in range(d):
        lo[k] = X[0, k]
        hi[k] = X[0, k]
    for i in range(n):
        for k in range(d):
            if X[i, k] < lo[k]:
                lo[k] = X[i, k]
            if X[i, k] > hi[k]:
                hi[k] = X[i, k]
    cdef double vol = 1.0, ext
    cdef int deff = 0
    for k in range(d):
        ext = hi[k] - lo[k]
        if ext > 0:
            vol *= ext
            deff += 1
    cdef double cell = 1.0
    if deff > 0:
        cell = (vol / n) ** (1.0 / deff)
    cdef Py_ssize_t total
    while True:
        total = 1
        for k in range(d):
            ext = hi[k] - lo[k]
            ncell[k] = <Py_ssize_t>(ext / cell) + 1 if ext > 0 else 1
            total *= ncell[k]
        if total <= 4 * n + 16:
            break
        cell *= 2.0
    stride[d - 1] = 1
    for k in range(d - 2, -1, -1):
        stride[k] = stride[k + 1] * ncell[k + 1]

    cell_of_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] cell_of = cell_of_arr
    cdef Py_ssize_t ci, c
    for i in range(n):
        ci = 0
        for k in range(d):
            c = <Py_ssize_t>((X[i, k] - lo[k]) / cell)
            if c >= ncell[k]:
                c = ncell[k] - 1
            if c < 0:
                c = 0
            ci += c * stride[k]
        cell_of[i] = ci
    order_arr = np.argsort(cell_of_arr, kind="stable").astype(np.int64)
    start_arr = np.searchsorted(cell_of_arr[order_arr], np.arange(total + 1)).astype(np.int64)
    cdef cnp.int64_t[::1] order = order_arr
    cdef cnp.int64_t[::1] start = start_arr

    heap_arr = np.arange(n, dtype=np.intp)
    pos_arr = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] heap = heap_arr
    cdef Py_ssize_t[::1] pos = pos_arr
    sel_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] selected = sel_arr

    cdef Py_ssize_t size = n, top, last
    cdef double r, dd, lo_c, hi_c
    cdef Py_ssize_t cmin[MAXDIM]
    cdef Py_ssize_t cmax[MAXDIM]
    cdef Py_ssize_t cur[MAXDIM]
    cdef Py_ssize_t p, base_cell

    with nogil:
        for i in range(n // 2 - 1, -1, -1):
            _sift_down(&heap[0], &pos[0], &key[0], size, i)
        for q in range(n):
            top = heap[0]
            size -= 1
            if size > 0:
                last = heap[size]
                heap[0] = last
                pos[last] = 0
                _sift_down(&heap[0], &pos[0], &key[0], size, 0)
            pos[top] = -1
            selected[top] = 1
            perm[q] = top
            lengths[q] = key[top]
            if size == 0:
                break
            r = key[top] * (1.0 + 1e-9) + 1e-300
            for k in range(d):
                lo_c = (Xp[top * d + k] - r - lo[k]) / cell
                hi_c = (Xp[top * d + k] + r - lo[k]) / cell
                if lo_c < 0:
                    lo_c = 0
                if hi_c > ncell[k] - 1:
                    hi_c = ncell[k] - 1
                if hi_c < 0:
                    hi_c = 0
                cmin[k] = <Py_ssize_t>floor(lo_c)
                cmax[k] = <Py_ssize_t>floor(hi_c)
                if cmin[k] > cmax[k]:
                    cmin[k] = cmax[k]
                cur[k] = cmin[k]
            while True:
                base_cell = 0
                for k in range(d):
                    base_cell += cur[k] * stride[k]
                for p in range(start[base_cell], start[base_cell + 1]):
                    j = order[p]
                    if selected[j]:
                        continue
                    dd = _dist(Xp, d, j, top)
                    if dd < key[j]:
                        key[j] = dd
                        _sift_down(&heap[0], &pos[0], &key[0], size, pos[j])
                k = d - 1
                while k >= 0:
                    cur[k] += 1
                    if cur[k] <= cmax[k]:
                        break
                    cur[k] = cmin[k]
                    k -= 1
                if k < 0:
                    break
    return perm_arr, len_arr


# ----------------------------------------------------------------------------
# kernel blocks
# ----------------------------------------------------------------------------

cdef inline double _deriv(int m, const int* idx, const double* t, const double* h) noexcept nogil:
    cdef int i, j, k, l
    if m == 0:
        return h[0]
    if m == 1:
        return h[1] * t[idx[0]]
    if m == 2:
        i = idx[0]
        j = idx[1]
        return h[2] * t[i] * t[j] + (h[1] if i == j else 0.0)
    if m == 3:
        i = idx[0]
        j = idx[1]
        k = idx[2]
        return (h[3] * t[i] * t[j] * t[k]
                + h[2] * ((t[k] if i == j else 0.0) + (t[j] if i == k else 0.0)
                          + (t[i] if j == k else 0.0)))
    i = idx[0]
    j = idx[1]
    k = idx[2]
    l = idx[3]
    return (h[4] * t[i] * t[j] * t[k] * t[l]
            + h[3] * ((t[k] * t[l] if i == j else 0.0) + (t[j] * t[l] if i == k else 0.0)
                      + (t[j] * t[k] if i == l else 0.0) + (t[i] * t[l] if j == k else 0.0)
                      + (t[i] * t[k] if j == l else 0.0) + (t[i] * t[j] if k == l else 0.0))
            + h[2] * ((1.0 if (i == j and k == l) else 0.0) + (1.0 if (i == k and j == l) else 0.0)
                      + (1.0 if (i == l and j == k) else 0.0)))


cdef void _nonzeros(const double* C, Py_ssize_t n, Py_ssize_t P, const cnp.int64_t* order,
                    int* cnt, int* idx, double* val, int* omax) noexcept nogil:
    cdef Py_ssize_t i, a
    cdef int c, om
    for i in range(n):
        c = 0
        om = 0
        for a in range(P):
            if C[i * P + a] != 0.0:
                idx[i * P + c] = <int>a
                val[i * P + c] = C[i * P + a]
                if order[a] > om:
                    om = <int>order[a]
                c += 1
        cnt[i] = c
        omax[i] = om


def kernel_block(double[:, ::1] xa, double[:, ::1] ca, double[:, ::1] xb, double[:, ::1] cb,
                 double[:, ::1] qcoef, int qoff, double a, double amp, double z_tiny,
                 cnp.int64_t[:, ::1] op_dims, cnp.int64_t[::1] op_order, bint symmetric):
    """Matrix of kernel pairings between two measurement sets in primitive-op form.

    Rows of ``ca``/``cb`` hold weights over the primitive operators; entry
    ``(u, v)`` is ``sum ca[u, al] cb[v, be] D_x^al D_y^be k(xa[u], xb[v])``.
    """
    cdef Py_ssize_t na = xa.shape[0], nb = xb.shape[0], d = xa.shape[1], P = ca.shape[1]
    cdef Py_ssize_t W = qcoef.shape[1]
    if W > MAXW or P > MAXP or d > MAXDIM:
        raise ValueError("kernel table too large for the compiled path")
    if xb.shape[1] != d or cb.shape[1] != P:
        raise ValueError("shape mismatch")
    out_arr = np.zeros((na, nb), dtype=np.float64)
    if na == 0 or nb == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr

    cdef int* cnt_a = <int*>malloc(na * sizeof(int))
    cdef int* idx_a = <int*>malloc(na * P * sizeof(int))
    cdef double* val_a = <double*>malloc(na * P * sizeof(double))
    cdef int* om_a = <int*>malloc(na * sizeof(int))
    cdef int* cnt_b = <int*>malloc(nb * sizeof(int))
    cdef int* idx_b = <int*>malloc(nb * P * sizeof(int))
    cdef double* val_b = <double*>malloc(nb * P * sizeof(double))
    cdef int* om_b = <int*>malloc(nb * sizeof(int))
    if not (cnt_a and idx_a and val_a and om_a and cnt_b and idx_b and val_b and om_b):
        free(cnt_a); free(idx_a); free(val_a); free(om_a)
        free(cnt_b); free(idx_b); free(val_b); free(om_b)
        raise MemoryError()

    cdef int dims[MAXP][2]
    cdef int ords[MAXP]
    cdef Py_ssize_t al
    for al in range(P):
        dims[al][0] = <int>op_dims[al, 0]
        dims[al][1] = <int>op_dims[al, 1]
        ords[al] = <int>op_order[al]

    cdef double scale[5]
    cdef double h0[5]
    cdef Py_ssize_t n_, kk
    cdef double a2 = a * a
    scale[0] = amp
    for n_ in range(1, 5):
        scale[n_] = scale[n_ - 1] * a2
    for n_ in range(5):
        h0[n_] = scale[n_] * qcoef[n_, qoff] if n_ <= 2 else 0.0

    cdef Py_ssize_t u, v, v0, s, w, m, mm, be
    cdef double t[MAXDIM]
    cdef double h[5]
    cdef double zp[MAXW]
    cdef int idx[4]
    cdef double r, z, e, zinv, acc, poly, wa
    cdef int nmax, oa, ob, sgn
    cdef bint tiny

    with nogil:
        _nonzeros(&ca[0, 0], na, P, &op_order[0], cnt_a, idx_a, val_a, om_a)
        _nonzeros(&cb[0, 0], nb, P, &op_order[0], cnt_b, idx_b, val_b, om_b)
        for u in range(na):
            v0 = u if symmetric else 0
            for v in range(v0, nb):
                if cnt_a[u] == 0 or cnt_b[v] == 0:
                    continue
                r = 0.0
                for kk in range(d):
                    t[kk] = xa[u, kk] - xb[v, kk]
                    r = r + t[kk] * t[kk]
                r = sqrt(r)
                z = a * r
                nmax = om_a[u] + om_b[v]
                tiny = z < z_tiny
                if tiny:
                    for kk in range(d):
                        t[kk] = 0.0
                    for n_ in range(nmax + 1):
                        h[n_] = h0[n_]
                else:
                    e = exp(-z)
                    zinv = 1.0 / z
                    zp[qoff] = 1.0
                    for kk in range(qoff + 1, W):
                        zp[kk] = zp[kk - 1] * z
                    for kk in range(qoff - 1, -1, -1):
                        zp[kk] = zp[kk + 1] * zinv
                    for n_ in range(nmax + 1):
                        poly = 0.0
                        for kk in range(W):
                            poly = poly + qcoef[n_, kk] * zp[kk]
                        h[n_] = scale[n_] * e * poly
                acc = 0.0
                for s in range(cnt_a[u]):
                    al = idx_a[u * P + s]
                    wa = val_a[u * P + s]
                    oa = ords[al]
                    for w in range(cnt_b[v]):
                        be = idx_b[v * P + w]
                        ob = ords[be]
                        m = 0
                        for mm in range(oa):
                            idx[m] = dims[al][mm]
                            m += 1
                        for mm in range(ob):
                            idx[m] = dims[be][mm]
                            m += 1
                        sgn = -1 if (ob & 1) else 1
                        acc = acc + sgn * wa * val_b[v * P + w] * _deriv(m, idx, t, h)
                out[u, v] = acc
        if symmetric:
            for u in range(na):
                for v in range(u):
                    out[u, v] = out[v, u]

    free(cnt_a); free(idx_a); free(val_a); free(om_a)
    free(cnt_b); free(idx_b); free(val_b); free(om_b)
    return out_arr


# ----------------------------------------------------------------------------
# sparse upper-triangular solves (CSC storage, diagonal last in each column)
# ----------------------------------------------------------------------------

def upper_solve(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices, double[::1] data,
                double[::1] b, bint transposed):
    """Solve ``U x = b`` or ``U^T x = b`` for an upper-triangular CSC factor."""
    cdef Py_ssize_t n = b.shape[0], j, p, p0, p1
    x_arr = np.array(b, dtype=np.float64, copy=True)
    cdef double[::1] x = x_arr
    cdef double diag, xj, s
    with nogil:
        if not transposed:
            for j in range(n - 1, -1, -1):
                p0 = indptr[j]
                p1 = indptr[j + 1] - 1
                diag = data[p1]
                if diag == 0.0:
                    with gil:
                        raise ZeroDivisionError(f"zero diagonal in column {j}")
                xj = x[j] / diag
                x[j] = xj
                for p in range(p0, p1):
                    x[indices[p]] -= data[p] * xj
        else:
            for j in range(n):
                p0 = indptr[j]
                p1 = indptr[j + 1] - 1
                diag = data[p1]
                if diag == 0.0:
                    with gil:
                        raise ZeroDivisionError(f"zero diagonal in column {j}")
                s = x[j]
                for p in range(p0, p1):
                    s = s - data[p] * x[indices[p]]
                x[j] = s / diag
    return x_arr
