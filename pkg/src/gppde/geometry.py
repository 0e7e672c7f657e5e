"""Point sets, distances to conditioning sets, and conditioned maximin orderings."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial import QhullError

from . import _backend


@dataclass(frozen=True)
class Empty:
    """The empty conditioning set; every distance to it is infinite."""


@dataclass(frozen=True)
class BoxBoundary:
    """Boundary of the axis-aligned box ``[lo, hi]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True, eq=False)
class PointList:
    """A finite set of points used as a conditioning set."""

    points: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", as_points(self.points))


ConditioningSet = Empty | BoxBoundary | PointList


@dataclass(eq=False)
class Ordering:
    """Permutation ``perm[q] = index of the q-th selected item`` with per-position lengthscales."""

    perm: np.ndarray
    lengthscales: np.ndarray
    conditioning: ConditioningSet = field(default_factory=Empty)

    def __len__(self) -> int:
        return len(self.perm)

    def rank(self) -> np.ndarray:
        """Inverse permutation: position of each item."""
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv


def as_points(coords) -> np.ndarray:
    X = np.asarray(coords, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("points must be an (n, d) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("point coordinates must be finite")
    return np.ascontiguousarray(X)


def pairwise_dist(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Euclidean distances with squares accumulated coordinate by coordinate."""
    s = np.zeros((xa.shape[0], xb.shape[0]))
    for k in range(xa.shape[1]):
        diff = xa[:, k][:, None] - xb[:, k][None, :]
        s += diff * diff
    return np.sqrt(s)


def row_dist(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Distances between matching rows of two equally shaped arrays."""
    s = np.zeros(xa.shape[0])
    for k in range(xa.shape[1]):
        diff = xa[:, k] - xb[:, k]
        s += diff * diff
    return np.sqrt(s)


def dists_to_set(X, A: ConditioningSet) -> np.ndarray:
    """Distance from every row of ``X`` to the conditioning set ``A``."""
    X = as_points(X)
    if isinstance(A, Empty):
        return np.full(X.shape[0], np.inf)
    if isinstance(A, BoxBoundary):
        lo = np.asarray(A.lo)
        hi = np.asarray(A.hi)
        if lo.size != X.shape[1]:
            raise ValueError("box dimension does not match the points")
        inside = np.all((X >= lo) & (X <= hi), axis=1)
        face = np.minimum(X - lo, hi - X).min(axis=1)
        outside = np.sqrt((np.maximum(np.maximum(lo - X, X - hi), 0.0) ** 2).sum(axis=1))
        return np.where(inside, face, outside)
    if isinstance(A, PointList):
        if A.points.shape[0] == 0:
            return np.full(X.shape[0], np.inf)
        _, nn = cKDTree(A.points).query(X, k=1)
        return row_dist(X, A.points[nn])
    raise TypeError(f"unsupported conditioning set {A!r}")


def dist_to_set(x, A: ConditioningSet) -> float:
    return float(dists_to_set(np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :], A)[0])


def diameter(X) -> float:
    X = as_points(X)
    n, d = X.shape
    if n < 2:
        return 0.0
    if d == 1:
        return float(X.max() - X.min())
    cand = X
    if n > 64:
        try:
            cand = X[ConvexHull(X).vertices]
        except QhullError:
            cand = X
    best = 0.0
    for start in range(0, cand.shape[0], 2048):
        best = max(best, float(pairwise_dist(cand[start:start + 2048], cand).max()))
    return best


def check_distinct(X: np.ndarray) -> None:
    if np.unique(X, axis=0).shape[0] != X.shape[0]:
        raise ValueError("point set contains duplicate points; maximin ordering is ill-defined")


def maximin_order(pts, A: ConditioningSet | None = None) -> Ordering:
    """Conditioned maximin ordering.

    With ``A`` empty the first pick is index 0 and its lengthscale is the
    diameter of the point set.  Ties go to the smallest index.
    """
    X = as_points(pts)
    if X.shape[0] == 0:
        raise ValueError("cannot order an empty point set")
    A = Empty() if A is None else A
    check_distinct(X)
    init = dists_to_set(X, A)
    perm, lengths = _backend.active().maximin(X, init)
    perm = np.asarray(perm, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.float64)
    if isinstance(A, Empty) or not math.isfinite(lengths[0]):
        lengths[0] = diameter(X) if X.shape[0] > 1 else 1.0
    return Ordering(perm, lengths, A)


def homogeneity(pts, A: ConditioningSet | None = None, domain: tuple | None = None,
                max_probes: int = 4_000_000) -> float:
    """Ratio of the separation distance to the fill distance over the box ``domain``.

    The fill distance is estimated on a probe grid with spacing at most a
    quarter of the separation distance (coarser if ``max_probes`` would be
    exceeded, which triggers a warning).  ``domain`` defaults to the box of
    ``A`` or else the bounding box of the points.
    """
    X = as_points(pts)
    A = Empty() if A is None else A
    n, d = X.shape
    if n < 2 and isinstance(A, Empty):
        raise ValueError("homogeneity needs at least two points or a nonempty conditioning set")
    if domain is None:
        if isinstance(A, BoxBoundary):
            domain = (A.lo, A.hi)
        else:
            domain = (X.min(axis=0), X.max(axis=0))
    lo = np.atleast_1d(np.asarray(domain[0], dtype=np.float64))
    hi = np.atleast_1d(np.asarray(domain[1], dtype=np.float64))

    tree = cKDTree(X)
    sep = np.inf
    if n > 1:
        dnn, _ = tree.query(X, k=2)
        sep = float(dnn[:, 1].min())
    sep = min(sep, float(dists_to_set(X, A).min()))

    spacing = sep / 4.0 if sep > 0 else float(np.max(hi - lo)) / 64.0
    counts = np.maximum(np.ceil((hi - lo) / spacing - 1e-9).astype(np.int64) + 1, 2)
    if np.prod(counts.astype(float)) > max_probes:
        shrink = (np.prod(counts.astype(float)) / max_probes) ** (1.0 / d)
        counts = np.maximum((counts / shrink).astype(np.int64), 2)
        warnings.warn("homogeneity probe grid capped; fill distance is a coarser estimate", RuntimeWarning,
                      stacklevel=2)
    axes = [np.linspace(lo[k], hi[k], counts[k]) for k in range(d)]
    fill = 0.0
    grids = np.meshgrid(*axes, indexing="ij")
    probes = np.stack([g.ravel() for g in grids], axis=1)
    for start in range(0, probes.shape[0], 500_000):
        chunk = probes[start:start + 500_000]
        dp, _ = tree.query(chunk, k=1)
        dp = np.minimum(dp, dists_to_set(chunk, A))
        fill = max(fill, float(dp.max()))
    if fill == 0.0:
        return np.inf
    value = sep / fill
    if value < 1e-6:
        warnings.warn(f"homogeneity {value:.3g} is nearly zero (clustered points)", RuntimeWarning, stacklevel=2)
    return value


def square_grid(m: int, lo: float = 0.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Interior nodes of an ``(m+2) x (m+2)`` node grid on a square and its ``4(m+1)`` boundary nodes."""
    if m < 1:
        raise ValueError("need at least one interior node per side")
    ticks = np.linspace(lo, hi, m + 2)
    inner = ticks[1:-1]
    g1, g2 = np.meshgrid(inner, inner, indexing="ij")
    interior = np.stack([g1.ravel(), g2.ravel()], axis=1)
    side = ticks[:-1]
    boundary = np.concatenate([
        np.stack([side, np.full_like(side, lo)], axis=1),
        np.stack([np.full_like(side, hi), side], axis=1),
        np.stack([ticks[::-1][:-1], np.full_like(side, hi)], axis=1),
        np.stack([np.full_like(side, lo), ticks[::-1][:-1]], axis=1),
    ])
    return interior, boundary


def interval_grid(n: int, lo: float = -1.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``n`` equispaced interior nodes of ``[lo, hi]`` and the two endpoints."""
    if n < 1:
        raise ValueError("need at least one interior node")
    ticks = np.linspace(lo, hi, n + 2)
    return ticks[1:-1, None].copy(), np.array([[lo], [hi]])
