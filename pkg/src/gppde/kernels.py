"""Matérn kernels with closed-form mixed derivatives for derivative measurements.

A half-integer Matérn kernel with ``nu = p + 1/2`` is ``amp * P(z) exp(-z)``
with ``z = a r`` and ``a = sqrt(2 nu) / lengthscale``.  Writing the kernel as
a function of ``s = r^2 / 2`` gives radial functions ``h_n = d^n/ds^n``,
each of the form ``amp * a^(2n) * Q_n(z) exp(-z)`` for a Laurent polynomial
``Q_n``.  Every mixed partial in ``t = x - y`` is a sum of products of
``h_n`` with components of ``t`` and Kronecker deltas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

from . import _backend

ALLOWED_NU = (2.5, 3.5, 4.5)
MAX_ORDER_PER_ARG = 2
# Laurent powers z^-4 .. z^p are stored; column index = power + QOFF
QOFF = 4
TAYLOR_RADIUS = 1e-10


@lru_cache(maxsize=None)
def radial_table(p: int) -> np.ndarray:
    """Coefficients of ``Q_0..Q_4`` as a ``(5, p + 5)`` array over powers ``-4..p``."""
    base = {p - i: Fraction(math.factorial(p) * math.factorial(p + i) * 2 ** (p - i),
                            math.factorial(2 * p) * math.factorial(i) * math.factorial(p - i))
            for i in range(p + 1)}
    series = [base]
    for _ in range(4):
        q = series[-1]
        nxt: dict[int, Fraction] = {}
        for k, c in q.items():
            if k != 0:
                nxt[k - 2] = nxt.get(k - 2, Fraction(0)) + c * k
            nxt[k - 1] = nxt.get(k - 1, Fraction(0)) - c
        series.append({k: c for k, c in nxt.items() if c != 0})
    table = np.zeros((5, p + 1 + QOFF))
    for n, q in enumerate(series):
        for k, c in q.items():
            if k < -QOFF:
                raise ArithmeticError("radial table needs more negative powers")
            table[n, k + QOFF] = float(c)
    return table


def primitive_ops(d: int) -> list[tuple[int, ...]]:
    """Primitive operators: identity, first partials, then second partials ``(k, l)`` with ``k <= l``."""
    ops: list[tuple[int, ...]] = [()]
    ops += [(k,) for k in range(d)]
    ops += list(combinations_with_replacement(range(d), 2))
    return ops


@lru_cache(maxsize=None)
def _op_arrays(d: int) -> tuple[np.ndarray, np.ndarray]:
    ops = primitive_ops(d)
    dims = np.full((len(ops), 2), -1, dtype=np.int64)
    order = np.zeros(len(ops), dtype=np.int64)
    for a, op in enumerate(ops):
        order[a] = len(op)
        dims[a, :len(op)] = op
    return dims, order


@dataclass(frozen=True)
class DiffOp:
    """A differential operator: identity, a partial derivative, or the Laplacian.

    ``partial`` is a multi-index; ``laplacian=True`` overrides it.
    """

    partial: tuple[int, ...] = ()
    laplacian: bool = False

    def __post_init__(self) -> None:
        if any(g < 0 for g in self.partial):
            raise ValueError("multi-index entries must be nonnegative")
        if sum(self.partial) > MAX_ORDER_PER_ARG:
            raise ValueError(f"derivative order above {MAX_ORDER_PER_ARG} is unsupported")

    @classmethod
    def identity(cls) -> "DiffOp":
        return cls()

    @classmethod
    def lap(cls) -> "DiffOp":
        return cls(laplacian=True)

    @classmethod
    def d(cls, *dims: int, dim: int | None = None) -> "DiffOp":
        """Partial derivative along the listed axes, e.g. ``DiffOp.d(0, 1)`` for the mixed second partial."""
        width = (max(dims) + 1) if dim is None else dim
        gamma = [0] * width
        for k in dims:
            gamma[k] += 1
        return cls(tuple(gamma))

    @property
    def order(self) -> int:
        return 2 if self.laplacian else sum(self.partial)

    def coefficients(self, d: int) -> np.ndarray:
        ops = primitive_ops(d)
        c = np.zeros(len(ops))
        if self.laplacian:
            for k in range(d):
                c[ops.index((k, k))] = 1.0
            return c
        if len(self.partial) > d and any(self.partial[d:]):
            raise ValueError("multi-index longer than the dimension")
        axes: list[int] = []
        for k, g in enumerate(self.partial):
            axes += [k] * g
        c[ops.index(tuple(axes))] = 1.0
        return c


@dataclass(frozen=True)
class MaternKernel:
    nu: float = 2.5
    lengthscale: float = 0.3
    amplitude: float = 1.0
    jitter: float = 0.0  # dense-oracle only; the sparse path ignores it
    _table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not any(abs(self.nu - v) < 1e-12 for v in ALLOWED_NU):
            raise ValueError(f"nu must be one of {ALLOWED_NU}")
        if not self.lengthscale > 0 or not self.amplitude > 0:
            raise ValueError("lengthscale and amplitude must be positive")
        object.__setattr__(self, "_table", radial_table(self.p))

    @property
    def p(self) -> int:
        return int(round(self.nu - 0.5))

    @property
    def rate(self) -> float:
        return math.sqrt(2.0 * self.nu) / self.lengthscale

    def max_total_order(self) -> int:
        """Largest ``J`` such that order-``J`` measurements live in the RKHS dual (``nu > J``)."""
        return int(math.ceil(self.nu) - 1)

    def check_order(self, order: int) -> None:
        if order > self.max_total_order() or order > MAX_ORDER_PER_ARG:
            raise ValueError(f"Matérn nu={self.nu} does not support derivative order {order}")

    def radial(self, r, n: int = 0) -> np.ndarray:
        """``h_n`` as a function of distance ``r``."""
        z = self.rate * np.asarray(r, dtype=np.float64)
        zs = np.where(z > 0, z, 1.0)
        poly = sum(c * zs ** float(k - QOFF) for k, c in enumerate(self._table[n]) if c != 0.0)
        out = self.amplitude * self.rate ** (2 * n) * poly * np.exp(-zs)
        at0 = self.amplitude * self.rate ** (2 * n) * self._table[n, QOFF] if n <= 2 else 0.0
        return np.where(z > 0, out, at0)

    def covariance(self, x, y) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if x.shape != y.shape:
            raise ValueError("points must have equal dimension")
        return float(self.radial(np.sqrt(np.sum((x - y) ** 2)), 0))

    def block(self, xa: np.ndarray, ca: np.ndarray, xb: np.ndarray, cb: np.ndarray,
              symmetric: bool = False) -> np.ndarray:
        """Pairings between measurement sets given as base points and primitive-op weights."""
        d = xa.shape[1]
        dims, order = _op_arrays(d)
        return _backend.active().kernel_block(
            np.ascontiguousarray(xa, dtype=np.float64), np.ascontiguousarray(ca, dtype=np.float64),
            np.ascontiguousarray(xb, dtype=np.float64), np.ascontiguousarray(cb, dtype=np.float64),
            self._table, QOFF, self.rate, self.amplitude, TAYLOR_RADIUS * math.sqrt(2.0 * self.nu),
            dims, order, bool(symmetric))


def covariance(k: MaternKernel, x, y) -> float:
    return k.covariance(x, y)


def bilinear_entry(k: MaternKernel, mi, mj) -> float:
    """Kernel pairing of two measurements (objects with ``point`` and ``coefficients(d)``)."""
    xa = np.atleast_2d(np.asarray(mi.point, dtype=np.float64))
    xb = np.atleast_2d(np.asarray(mj.point, dtype=np.float64))
    d = xa.shape[1]
    ca = np.atleast_2d(mi.coefficients(d))
    cb = np.atleast_2d(mj.coefficients(d))
    return float(k.block(xa, ca, xb, cb)[0, 0])


def dense_kernel_matrix(k: MaternKernel, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Full kernel matrix of measurements with base points ``X`` and weights ``C``."""
    theta = k.block(X, C, X, C, symmetric=True)
    if k.jitter:
        theta[np.diag_indices_from(theta)] += k.jitter
    return theta
