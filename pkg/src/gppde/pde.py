"""Nonlinear PDE constraints and the factor-accelerated Gauss-Newton solver.

The unknown ``z`` holds the values of every measurement of the layout; the
constraints read ``F(z) = y`` with one row per point (interior rows first).
Each Gauss-Newton step solves the reduced system
``DF Theta DF^T gamma = y - F(z) + DF z`` by preconditioned CG and sets
``z = Theta DF^T gamma``, with ``Theta`` replaced by its sparse factorization.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from . import exact
from .factorization import FactorizationError, SparseUpperFactor, factorize
from .geometry import BoxBoundary, interval_grid, square_grid
from .kernels import MaternKernel, primitive_ops
from .linsolve import DEFAULT_TOL, apply_covariance, apply_precision, pcg, reduced_operator
from .measurements import (MeasurementLayout, order_boundary_first, order_interior_first, reduce_measurements,
                           standard_layout)


class GaussNewtonError(RuntimeError):
    """Numerical failure inside a Gauss-Newton iteration (``iteration`` is 0-based, -1 for setup)."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class GNConfig:
    steps: int = 3
    rho: float = 4.0
    rho_r: float | None = None
    lam: float = 1.5
    pcg_tol: float = DEFAULT_TOL
    pcg_maxit: int | None = None
    workers: int = 1
    dense_covariance: bool = False  # exact kernel matrix instead of the factor (small N only)

    def __post_init__(self) -> None:
        if self.rho_r is None:
            self.rho_r = self.rho
        if self.steps < 1:
            raise ValueError("need at least one Gauss-Newton step")
        if not (self.rho > 0 and self.rho_r > 0):
            raise ValueError("sparsity parameters must be positive")
        if not self.lam > 1:
            raise ValueError("lambda must exceed 1")
        if not self.pcg_tol > 0:
            raise ValueError("pcg tolerance must be positive")


@dataclass(eq=False)
class PDEProblem:
    """Constraint map of one PDE on a measurement layout.

    ``kind`` is ``elliptic``, ``burgers`` or ``monge-ampere``; ``params``
    carries the nonlinearity (elliptic), the previous state, time step and
    viscosity (Burgers step).
    """

    kind: str
    layout: MeasurementLayout
    y: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        lay = self.layout
        self.dirac = lay.dirac_index()
        self.slots = {kind: lay.index_of(kind) for kind in set(lay.kinds.tolist()) if kind != "dirac"}
        if self.y.shape[0] != lay.M:
            raise ValueError("data vector must have one entry per point")

    def F_and_DF(self, z: np.ndarray) -> tuple[np.ndarray, sp.csr_matrix]:
        lay = self.layout
        z = np.asarray(z, dtype=np.float64)
        if z.shape[0] != lay.N:
            raise ValueError(f"state has length {z.shape[0]}, expected {lay.N}")
        mi, M = lay.n_interior, lay.M
        rows, cols, vals = [], [], []
        di = self.dirac[:mi]
        db = self.dirac[mi:]
        u = z[di]
        ii = np.arange(mi)
        if self.kind == "elliptic":
            lap = self.slots["laplacian"]
            F_int = -z[lap] + self.params["tau"](u)
            rows += [ii, ii]
            cols += [lap, di]
            vals += [-np.ones(mi), self.params["dtau"](u)]
        elif self.kind == "burgers":
            dt, nu = self.params["dt"], self.params["viscosity"]
            dx, dxx = self.slots["dx"], self.slots["dxx"]
            ux, uxx = z[dx], z[dxx]
            F_int = u / dt + 0.5 * u * ux - 0.5 * nu * uxx
            rows += [ii, ii, ii]
            cols += [di, dx, dxx]
            vals += [1.0 / dt + 0.5 * ux, 0.5 * u, np.full(mi, -0.5 * nu)]
        elif self.kind == "monge-ampere":
            s11, s22, s12 = self.slots["d11"], self.slots["d22"], self.slots["d12"]
            z11, z22, z12 = z[s11], z[s22], z[s12]
            F_int = z11 * z22 - z12 * z12
            rows += [ii, ii, ii]
            cols += [s11, s22, s12]
            vals += [z22, z11, -2.0 * z12]
        else:
            raise ValueError(f"unknown PDE kind {self.kind!r}")
        rows.append(np.arange(mi, M))
        cols.append(db)
        vals.append(np.ones(M - mi))
        F = np.concatenate([F_int, z[db]])
        DF = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(M, lay.N))
        return F, DF

    def residual_norm(self, z: np.ndarray) -> float:
        F, _ = self.F_and_DF(z)
        return float(np.linalg.norm(F - self.y))


def F_and_DF(problem: PDEProblem, z: np.ndarray) -> tuple[np.ndarray, sp.csr_matrix]:
    return problem.F_and_DF(z)


@dataclass(eq=False)
class Solution:
    gamma: np.ndarray
    z: np.ndarray
    w: np.ndarray
    kernel: MaternKernel
    layout: MeasurementLayout
    history: list[dict] = field(default_factory=list)
    factor: SparseUpperFactor | None = None


def elliptic_problem(interior, boundary, f, g, tau: Callable | None = None, dtau: Callable | None = None,
                     box: BoxBoundary | None = None) -> PDEProblem:
    """``-Laplacian(u) + tau(u) = f`` inside, ``u = g`` on the boundary; ``tau`` defaults to ``u^3``."""
    if tau is None:
        tau, dtau = (lambda u: u ** 3), (lambda u: 3.0 * u ** 2)
    if dtau is None:
        raise ValueError("a custom nonlinearity needs its derivative")
    layout = standard_layout("elliptic", interior, boundary, box)
    y = np.concatenate([np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)])
    return PDEProblem("elliptic", layout, y, {"tau": tau, "dtau": dtau})


def monge_ampere_problem(interior, boundary, f, g, box: BoxBoundary | None = None) -> PDEProblem:
    """``det(D^2 u) = f`` inside, ``u = g`` on the boundary."""
    layout = standard_layout("monge-ampere", interior, boundary, box)
    y = np.concatenate([np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)])
    return PDEProblem("monge-ampere", layout, y)


def burgers_step_problem(layout: MeasurementLayout, prev: tuple[np.ndarray, np.ndarray, np.ndarray],
                         dt: float, viscosity: float, g: np.ndarray | None = None) -> PDEProblem:
    """Crank-Nicolson step for ``u_t + u u_x = viscosity u_xx``; ``prev`` holds ``(u, u_x, u_xx)`` inside."""
    u, ux, uxx = (np.asarray(a, dtype=np.float64) for a in prev)
    y_int = u / dt - 0.5 * u * ux + 0.5 * viscosity * uxx
    g = np.zeros(layout.n_boundary) if g is None else np.asarray(g, dtype=np.float64)
    return PDEProblem("burgers", layout, np.concatenate([y_int, g]), {"dt": dt, "viscosity": viscosity})


def factorize_layout(kernel: MaternKernel, layout: MeasurementLayout, rho: float, lam: float = 1.5,
                     workers: int = 1) -> SparseUpperFactor:
    """Sparse factor of the inverse kernel matrix of ``layout`` under the interior-first ordering."""
    kernel.check_order(int(layout.orders().max()))
    ordering = order_interior_first(layout)
    return factorize(kernel, layout.X, layout.coef, ordering, rho, lam, workers)


def gauss_newton(problem: PDEProblem, kernel: MaternKernel, cfg: GNConfig, z0: np.ndarray | None = None,
                 factor: SparseUpperFactor | None = None) -> Solution:
    """Gauss-Newton with sparse-factor covariance products and a factor-preconditioned CG inner solve."""
    lay = problem.layout
    history: list[dict] = []
    if cfg.dense_covariance:
        from .kernels import dense_kernel_matrix
        theta = dense_kernel_matrix(kernel, lay.X, lay.coef)
        cov = theta.__matmul__
    else:
        if factor is None:
            t0 = time.perf_counter()
            try:
                factor = factorize_layout(kernel, lay, cfg.rho, cfg.lam, cfg.workers)
            except FactorizationError as exc:
                raise GaussNewtonError(str(exc), -1) from exc
            history.append({"stage": "factorize", "seconds": time.perf_counter() - t0, **factor.stats})
        big = factor

        def cov(v):
            return apply_covariance(big, v)

    z = np.zeros(lay.N) if z0 is None else np.array(z0, dtype=np.float64)
    gamma = np.zeros(lay.M)
    w = np.zeros(lay.N)
    res0 = problem.residual_norm(z)
    for k in range(cfg.steps):
        t0 = time.perf_counter()
        F, DF = problem.F_and_DF(z)
        rhs = problem.y - F + DF @ z
        try:
            reduced = reduce_measurements(lay, DF)
            q_order = order_boundary_first(reduced)
            red_factor = factorize(kernel, reduced.X, reduced.coef, q_order, cfg.rho_r, cfg.lam, cfg.workers)
        except (FactorizationError, ValueError) as exc:
            raise GaussNewtonError(str(exc), k) from exc
        A = reduced_operator(DF, cov)
        gamma, report = pcg(A, lambda v: apply_precision(red_factor, v), rhs, cfg.pcg_tol, cfg.pcg_maxit)
        if report.breakdown or not np.all(np.isfinite(gamma)):
            raise GaussNewtonError("conjugate gradients broke down (nonpositive curvature)", k)
        w = DF.T @ gamma
        z = cov(w)
        history.append({
            "stage": "gn",
            "iteration": k,
            "pcg_iterations": report.iterations,
            "pcg_converged": report.converged,
            "pcg_residual": report.relative_residuals[-1],
            "residual_before": res0 if k == 0 else history[-1]["residual_after"],
            "residual_after": problem.residual_norm(z),
            "seconds": time.perf_counter() - t0,
        })
    return Solution(gamma, z, np.asarray(w), kernel, lay, history, factor)


def dense_gauss_newton(problem: PDEProblem, kernel: MaternKernel, steps: int,
                       z0: np.ndarray | None = None) -> np.ndarray:
    """The same iteration with the exact kernel matrix and direct solves (small problems only)."""
    from .kernels import dense_kernel_matrix
    lay = problem.layout
    theta = dense_kernel_matrix(kernel, lay.X, lay.coef)
    z = np.zeros(lay.N) if z0 is None else np.array(z0, dtype=np.float64)
    for _ in range(steps):
        F, DF = problem.F_and_DF(z)
        D = DF.toarray()
        rhs = problem.y - F + D @ z
        gamma = cho_solve(cho_factor(D @ theta @ D.T), rhs)
        z = theta @ (D.T @ gamma)
    return z


def evaluate_measurements(sol: Solution, X: np.ndarray, C: np.ndarray, chunk_entries: int = 4_000_000) -> np.ndarray:
    """Apply measurement functionals (base points ``X``, weights ``C``) to the solution."""
    lay = sol.layout
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(X.shape[0])
    step = max(1, chunk_entries // max(1, lay.N))
    nz = np.flatnonzero(sol.w)
    Xw, Cw, w = lay.X[nz], lay.coef[nz], sol.w[nz]
    for start in range(0, X.shape[0], step):
        out[start:start + step] = sol.kernel.block(X[start:start + step], C[start:start + step], Xw, Cw) @ w
    return out


def evaluate_solution(sol: Solution, query) -> np.ndarray:
    """``u(x) = sum_a w_a K(x, phi_a)`` at the query points."""
    Q = np.asarray(query, dtype=np.float64)
    if Q.ndim == 1:
        Q = Q[:, None] if sol.layout.dim == 1 else Q[None, :]
    C = np.zeros((Q.shape[0], len(primitive_ops(Q.shape[1]))))
    C[:, 0] = 1.0
    return evaluate_measurements(sol, Q, C)


def error_norms(u_num, u_true, weights=None) -> tuple[float, float]:
    """Weighted discrete L2 error (weights default to ``1/n``) and max error."""
    a = np.asarray(u_num, dtype=np.float64)
    b = np.asarray(u_true, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    if a.size == 0:
        return 0.0, 0.0
    diff = a - b
    w = np.full(a.size, 1.0 / a.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != a.shape:
        raise ValueError("weights must match the vectors")
    return float(np.sqrt(np.sum(w * diff * diff))), float(np.max(np.abs(diff)))


# ---------------------------------------------------------------------------
# ready-made experiments
# ---------------------------------------------------------------------------

def grid_side(h: float | None = None, n_domain: int | None = None) -> int:
    """Interior nodes per side of the unit square from a spacing or an interior-point count."""
    if (h is None) == (n_domain is None):
        raise ValueError("give exactly one of h and n_domain")
    if h is not None:
        m = int(round(1.0 / h)) - 1
    else:
        m = int(round(math.sqrt(n_domain)))
        if m * m != n_domain:
            raise ValueError("n_domain must be a perfect square for the unit-square grid")
    if m < 1:
        raise ValueError("grid too coarse")
    return m


UNIT_BOX = BoxBoundary((0.0, 0.0), (1.0, 1.0))


def setup_elliptic(m: int, terms: int = 600) -> tuple[PDEProblem, np.ndarray]:
    interior, boundary = square_grid(m)
    u_int, f = exact.elliptic_forcing(interior, terms)
    g, _ = exact.elliptic_truth(boundary, terms)
    return elliptic_problem(interior, boundary, f, g, box=UNIT_BOX), u_int


def solve_elliptic(m: int, kernel: MaternKernel, cfg: GNConfig) -> tuple[Solution, dict]:
    problem, u_true = setup_elliptic(m)
    sol = gauss_newton(problem, kernel, cfg)
    u = sol.z[problem.dirac[:problem.layout.n_interior]]
    l2, linf = error_norms(u, u_true)
    return sol, {"l2": l2, "linf": linf, "N": problem.layout.N, "n_boundary": problem.layout.n_boundary}


def setup_monge_ampere(m: int) -> tuple[PDEProblem, np.ndarray, np.ndarray]:
    interior, boundary = square_grid(m)
    u_int, f = exact.monge_ampere_truth(interior)
    g, _ = exact.monge_ampere_truth(boundary)
    problem = monge_ampere_problem(interior, boundary, f, g, box=UNIT_BOX)
    lay = problem.layout
    z0 = np.zeros(lay.N)
    z0[problem.dirac] = 0.5 * np.sum(lay.points ** 2, axis=1)
    z0[problem.slots["d11"]] = 1.0
    z0[problem.slots["d22"]] = 1.0
    return problem, u_int, z0


def solve_monge_ampere(m: int, kernel: MaternKernel, cfg: GNConfig) -> tuple[Solution, dict]:
    problem, u_true, z0 = setup_monge_ampere(m)
    sol = gauss_newton(problem, kernel, cfg, z0=z0)
    u = sol.z[problem.dirac[:problem.layout.n_interior]]
    l2, linf = error_norms(u, u_true)
    return sol, {"l2": l2, "linf": linf, "N": problem.layout.N, "n_boundary": problem.layout.n_boundary}


@dataclass
class BurgersRun:
    solutions: list[Solution]
    x: np.ndarray
    u: np.ndarray
    times: np.ndarray


def burgers_march(n_domain: int, dt: float, T: float, kernel: MaternKernel, cfg: GNConfig,
                  viscosity: float = 0.001, keep: bool = False, reevaluate: bool = False) -> BurgersRun:
    """Crank-Nicolson marching on ``(-1, 1)`` from ``u = -sin(pi x)`` with zero boundary values.

    Each step warm-starts Gauss-Newton from the previous step's state.  The
    previous-step ``(u, u_x, u_xx)`` at the grid are read from that state,
    which is consistent with the factorized covariance; ``reevaluate=True``
    instead recomputes them with the exact cross-kernel ``K(x, phi) w``, which
    amplifies the factorization error through the large weights ``w``.  The
    kernel-matrix factor is shared by all steps.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("final time must be a positive multiple of the time step")
    interior, boundary = interval_grid(n_domain, -1.0, 1.0)
    layout = standard_layout("burgers", interior, boundary, BoxBoundary((-1.0,), (1.0,)))
    x = interior[:, 0]
    prev = exact.burgers_initial(x)
    z = np.zeros(layout.N)
    dirac = layout.dirac_index()
    z[dirac[:n_domain]] = prev[0]
    z[layout.index_of("dx")] = prev[1]
    z[layout.index_of("dxx")] = prev[2]
    try:
        factor = factorize_layout(kernel, layout, cfg.rho, cfg.lam, cfg.workers)
    except FactorizationError as exc:
        raise GaussNewtonError(str(exc), -1) from exc
    rows = np.concatenate([dirac[:n_domain], layout.index_of("dx"), layout.index_of("dxx")])
    sols = []
    for _ in range(n_steps):
        problem = burgers_step_problem(layout, prev, dt, viscosity)
        sol = gauss_newton(problem, kernel, cfg, z0=z, factor=factor)
        vals = evaluate_measurements(sol, layout.X[rows], layout.coef[rows]) if reevaluate else sol.z[rows]
        prev = (vals[:n_domain], vals[n_domain:2 * n_domain], vals[2 * n_domain:])
        z = sol.z
        if keep or not sols:
            sols.append(sol)
        else:
            sols[-1] = sol
    return BurgersRun(sols, x, prev[0], np.arange(1, n_steps + 1) * dt)
