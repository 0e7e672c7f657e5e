"""Measurement layouts for the PDE problems, the two ordering policies, and Jacobian reduction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import BoxBoundary, Empty, Ordering, PointList, as_points, maximin_order
from .kernels import DiffOp, primitive_ops

INTERIOR_DIRAC = "interior_dirac"
BOUNDARY_DIRAC = "boundary_dirac"
DERIVATIVE = "derivative"
COMBINATION = "combination"

# derivative blocks attached to interior points, in layout order
PDE_BLOCKS: dict[str, list[tuple[str, DiffOp]]] = {
    "elliptic": [("laplacian", DiffOp.lap())],
    "burgers": [("dx", DiffOp.d(0)), ("dxx", DiffOp.d(0, 0))],
    "monge-ampere": [("d11", DiffOp.d(0, 0)), ("d22", DiffOp.d(1, 1)), ("d12", DiffOp.d(0, 1))],
}


@dataclass(frozen=True)
class Measurement:
    """A weighted sum of differential operators evaluated at one base point."""

    point_index: int
    point: tuple[float, ...]
    terms: tuple[tuple[DiffOp, float], ...]

    def __post_init__(self) -> None:
        if not self.terms or all(w == 0 for _, w in self.terms):
            raise ValueError("a measurement needs at least one nonzero weight")
        if not all(np.isfinite(w) for _, w in self.terms):
            raise ValueError("measurement weights must be finite")

    @classmethod
    def dirac(cls, point_index: int, point) -> "Measurement":
        return cls(point_index, tuple(np.atleast_1d(point).tolist()), ((DiffOp.identity(), 1.0),))

    @classmethod
    def of(cls, point_index: int, point, op: DiffOp, weight: float = 1.0) -> "Measurement":
        return cls(point_index, tuple(np.atleast_1d(point).tolist()), ((op, float(weight)),))

    @property
    def order(self) -> int:
        return max(op.order for op, w in self.terms if w != 0)

    def coefficients(self, d: int) -> np.ndarray:
        c = np.zeros(len(primitive_ops(d)))
        for op, w in self.terms:
            c += w * op.coefficients(d)
        return c


@dataclass(eq=False)
class MeasurementLayout:
    """Measurements stored columnwise: base point index and weights over primitive operators.

    ``points`` lists interior points first, then boundary points.
    """

    points: np.ndarray
    n_interior: int
    point_index: np.ndarray
    coef: np.ndarray
    roles: np.ndarray
    kinds: np.ndarray
    block: np.ndarray
    box: BoxBoundary | None = None
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return int(self.point_index.shape[0])

    @property
    def M(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def n_boundary(self) -> int:
        return self.M - self.n_interior

    @property
    def X(self) -> np.ndarray:
        return self.points[self.point_index]

    def orders(self) -> np.ndarray:
        ops = primitive_ops(self.dim)
        op_order = np.array([len(o) for o in ops])
        nz = self.coef != 0
        return np.where(nz, op_order[None, :], 0).max(axis=1)

    def measurement(self, i: int) -> Measurement:
        ops = primitive_ops(self.dim)
        terms = []
        for a in np.flatnonzero(self.coef[i]):
            gamma = [0] * self.dim
            for k in ops[a]:
                gamma[k] += 1
            terms.append((DiffOp(tuple(gamma)), float(self.coef[i, a])))
        p = int(self.point_index[i])
        return Measurement(p, tuple(self.points[p].tolist()), tuple(terms))

    def index_of(self, kind: str) -> np.ndarray:
        """Measurement indices of one kind, in layout order."""
        return np.flatnonzero(self.kinds == kind)

    def dirac_index(self) -> np.ndarray:
        """For every point, the index of its Dirac measurement."""
        idx = np.full(self.M, -1, dtype=np.int64)
        mask = (self.coef[:, 0] != 0) & ~np.any(self.coef[:, 1:] != 0, axis=1)
        found = np.flatnonzero(mask)[::-1]  # first Dirac per point wins
        idx[self.point_index[found]] = found
        if np.any(idx < 0):
            raise ValueError("every point must carry a Dirac measurement")
        return idx


def standard_layout(pde: str, interior, boundary, box: BoxBoundary | None = None) -> MeasurementLayout:
    """Diracs at all points followed by the derivative blocks of ``pde`` at interior points."""
    if pde not in PDE_BLOCKS:
        raise ValueError(f"unknown PDE kind {pde!r}; expected one of {sorted(PDE_BLOCKS)}")
    Xi = as_points(interior)
    d = Xi.shape[1]
    Xb = as_points(boundary) if boundary is not None and len(boundary) else np.zeros((0, d))
    if Xi.shape[0] == 0:
        raise ValueError("the interior point set is empty")
    if Xb.shape[1] != d:
        raise ValueError("interior and boundary dimensions differ")
    points = np.vstack([Xi, Xb])
    if np.unique(points, axis=0).shape[0] != points.shape[0]:
        raise ValueError("interior and boundary points must be distinct")
    mi, mb = Xi.shape[0], Xb.shape[0]
    P = len(primitive_ops(d))
    dirac = np.zeros(P)
    dirac[0] = 1.0
    pidx = [np.arange(mi + mb)]
    coef = [np.tile(dirac, (mi + mb, 1))]
    roles = [np.array([INTERIOR_DIRAC] * mi + [BOUNDARY_DIRAC] * mb, dtype=object)]
    kinds = [np.array(["dirac"] * (mi + mb), dtype=object)]
    block = [np.zeros(mi + mb, dtype=np.int64)]
    for b, (kind, op) in enumerate(PDE_BLOCKS[pde], start=1):
        pidx.append(np.arange(mi))
        coef.append(np.tile(op.coefficients(d), (mi, 1)))
        roles.append(np.array([DERIVATIVE] * mi, dtype=object))
        kinds.append(np.array([kind] * mi, dtype=object))
        block.append(np.full(mi, b, dtype=np.int64))
    return MeasurementLayout(points, mi, np.concatenate(pidx).astype(np.int64), np.vstack(coef),
                             np.concatenate(roles), np.concatenate(kinds), np.concatenate(block), box)


def order_interior_first(layout: MeasurementLayout) -> Ordering:
    """All Diracs in maximin order (unconditioned), then derivative measurements.

    Derivative measurements are sorted by derivative order, then by type
    block, then by the maximin rank of their base point.  Each of them gets
    the lengthscale of the last Dirac.
    """
    dirac = layout.dirac_index()
    pts_order = maximin_order(layout.points, Empty())
    rank = pts_order.rank()
    is_dirac = np.zeros(layout.N, dtype=bool)
    is_dirac[dirac] = True
    deriv = np.flatnonzero(~is_dirac)
    orders = layout.orders()[deriv]
    key = np.lexsort((rank[layout.point_index[deriv]], layout.block[deriv], orders))
    perm = np.concatenate([dirac[pts_order.perm], deriv[key]]).astype(np.int64)
    lengths = np.concatenate([pts_order.lengthscales,
                              np.full(deriv.size, pts_order.lengthscales[-1])])
    return Ordering(perm, lengths, Empty())


def order_boundary_first(layout: MeasurementLayout) -> Ordering:
    """Boundary Diracs first (maximin within the boundary set), then the rest conditioned on the boundary.

    Requires one measurement per base point.
    """
    if np.unique(layout.point_index).size != layout.N:
        raise ValueError("boundary-first ordering needs one measurement per base point")
    bmask = layout.roles == BOUNDARY_DIRAC
    bidx = np.flatnonzero(bmask)
    iidx = np.flatnonzero(~bmask)
    X = layout.X
    perms, lengths = [], []
    if bidx.size:
        ob = maximin_order(X[bidx], Empty())
        perms.append(bidx[ob.perm])
        lengths.append(ob.lengthscales)
    if iidx.size:
        if layout.box is not None:
            cond = layout.box
        elif bidx.size:
            cond = PointList(X[bidx])
        else:
            cond = Empty()
        oi = maximin_order(X[iidx], cond)
        perms.append(iidx[oi.perm])
        lengths.append(oi.lengthscales)
    cond_out = layout.box if layout.box is not None else Empty()
    return Ordering(np.concatenate(perms).astype(np.int64), np.concatenate(lengths), cond_out)


def reduce_measurements(layout: MeasurementLayout, jac) -> MeasurementLayout:
    """Combine measurements row by row: the reduced functionals are ``jac @ phi``.

    Every row of ``jac`` must only touch measurements sharing one base point.
    """
    J = sp.csr_matrix(jac)
    if J.shape[1] != layout.N:
        raise ValueError(f"jacobian has {J.shape[1]} columns, layout has {layout.N} measurements")
    J.eliminate_zeros()
    counts = np.diff(J.indptr)
    if np.any(counts == 0):
        raise ValueError(f"jacobian row {int(np.flatnonzero(counts == 0)[0])} is zero")
    base = layout.point_index[J.indices]
    lo = np.minimum.reduceat(base, J.indptr[:-1])
    hi = np.maximum.reduceat(base, J.indptr[:-1])
    if np.any(lo != hi):
        bad = int(np.flatnonzero(lo != hi)[0])
        raise ValueError(f"jacobian row {bad} mixes measurements at different base points")
    coef = np.asarray(J @ layout.coef)
    is_bdry = (layout.roles[J.indices] == BOUNDARY_DIRAC).astype(np.int64)
    all_bdry = np.minimum.reduceat(is_bdry, J.indptr[:-1]).astype(bool)
    roles = np.where(all_bdry, BOUNDARY_DIRAC, COMBINATION).astype(object)
    kinds = np.where(all_bdry, "dirac", "combination").astype(object)
    return MeasurementLayout(layout.points, layout.n_interior, lo.astype(np.int64), coef, roles, kinds,
                             np.where(all_bdry, 0, 1).astype(np.int64), layout.box)
