"""Gaussian-process PDE solvers accelerated by sparse inverse-Cholesky factorization."""
from ._backend import available as available_backends
from ._backend import name as backend_name
from ._backend import set_backend
from .factorization import (FactorizationError, SparseUpperFactor, SparsityPattern, SupernodeSet,
                            aggregate_supernodes, build_pattern, dense_inverse_cholesky, factorize, kl_divergence,
                            kl_factorize)
from .geometry import (BoxBoundary, Empty, Ordering, PointList, dist_to_set, homogeneity, interval_grid,
                       maximin_order, square_grid)
from .kernels import DiffOp, MaternKernel, bilinear_entry, covariance, dense_kernel_matrix
from .linsolve import (PcgReport, apply_covariance, apply_precision, pcg, reduced_operator,
                       triangular_solve)
from .measurements import (Measurement, MeasurementLayout, order_boundary_first, order_interior_first,
                           reduce_measurements, standard_layout)
from .pde import (GaussNewtonError, GNConfig, PDEProblem, Solution, burgers_march, burgers_step_problem,
                  elliptic_problem, error_norms, evaluate_solution, gauss_newton, monge_ampere_problem)

__all__ = [
    "BoxBoundary", "DiffOp", "Empty", "FactorizationError", "GNConfig", "GaussNewtonError", "MaternKernel",
    "Measurement", "MeasurementLayout", "Ordering", "PDEProblem", "PcgReport", "PointList", "Solution",
    "SparseUpperFactor", "SparsityPattern", "SupernodeSet", "aggregate_supernodes", "apply_covariance",
    "apply_precision", "available_backends", "backend_name", "bilinear_entry", "build_pattern", "burgers_march",
    "burgers_step_problem", "covariance", "dense_inverse_cholesky", "dense_kernel_matrix", "dist_to_set",
    "elliptic_problem", "error_norms", "evaluate_solution", "factorize", "gauss_newton", "homogeneity",
    "interval_grid", "kl_divergence", "kl_factorize", "maximin_order", "monge_ampere_problem",
    "order_boundary_first", "order_interior_first", "pcg", "reduce_measurements", "reduced_operator",
    "set_backend", "square_grid", "standard_layout", "triangular_solve",
]
