import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gppde.factorization import SparseUpperFactor, factorize
from gppde.geometry import square_grid
from gppde.kernels import MaternKernel, dense_kernel_matrix
from gppde.linsolve import (DEFAULT_TOL, apply_covariance, apply_precision, covariance_operator, default_maxit,
                            pcg, precision_operator, reduced_operator, triangular_solve)
from gppde.measurements import order_interior_first, standard_layout
from gppde.pde import UNIT_BOX, elliptic_problem

K52 = MaternKernel(2.5, 0.3)


def random_upper(rng, n, density=0.15):
    U = sp.random(n, n, density=density, random_state=rng, format="csc")
    U = sp.triu(U, 1) + sp.diags(1.0 + rng.random(n))
    return sp.csc_matrix(U)


def identity_factor(n):
    return SparseUpperFactor(sp.identity(n, format="csc"), np.arange(n))


@pytest.fixture(scope="module")
def small_factor():
    lay = standard_layout("elliptic", *square_grid(4))
    o = order_interior_first(lay)
    return lay, factorize(K52, lay.X, lay.coef, o, math.inf), dense_kernel_matrix(K52, lay.X, lay.coef)


def test_triangular_solve_trivial():
    b = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(triangular_solve(sp.identity(3, format="csc"), b), b)
    assert triangular_solve(sp.csc_matrix([[2.0]]), np.array([4.0])).tolist() == [2.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 60), st.booleans())
def test_triangular_solve_residual(seed, n, transposed):
    rng = np.random.default_rng(seed)
    U = random_upper(rng, n)
    b = rng.normal(size=n)
    x = triangular_solve(U, b, transposed)
    A = U.T if transposed else U
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_triangular_solve_errors():
    U = sp.csc_matrix(np.array([[1.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ZeroDivisionError):
        triangular_solve(U, np.ones(2))
    with pytest.raises(ValueError):
        triangular_solve(sp.identity(3, format="csc"), np.ones(2))


def test_identity_factor_operators():
    v = np.arange(5.0)
    f = identity_factor(5)
    assert np.array_equal(apply_precision(f, v), v)
    assert np.array_equal(apply_covariance(f, v), v)


def test_operators_match_dense(small_factor):
    _, f, theta = small_factor
    rng = np.random.default_rng(1)
    v = rng.normal(size=f.N)
    cv = apply_covariance(f, v)
    assert np.linalg.norm(cv - theta @ v) <= 1e-8 * np.linalg.norm(theta @ v)
    pv = apply_precision(f, v)
    ref = np.linalg.solve(theta, v)
    assert np.linalg.norm(pv - ref) <= 1e-8 * np.linalg.norm(ref)


def test_operators_symmetric_and_inverse(small_factor):
    _, f, _ = small_factor
    rng = np.random.default_rng(2)
    v, w = rng.normal(size=(2, f.N))
    pv = apply_precision(f, v)
    assert abs(pv @ w - v @ apply_precision(f, w)) <= 1e-12 * np.linalg.norm(pv) * np.linalg.norm(w)
    cv = apply_covariance(f, v)
    assert abs(cv @ w - v @ apply_covariance(f, w)) <= 1e-12 * np.linalg.norm(cv) * np.linalg.norm(w)
    back = apply_covariance(f, apply_precision(f, v))
    assert np.linalg.norm(back - v) <= 1e-10 * np.linalg.norm(v)


def test_operator_wrappers(small_factor):
    _, f, _ = small_factor
    v = np.random.default_rng(3).normal(size=f.N)
    assert np.array_equal(precision_operator(f) @ v, apply_precision(f, v))
    assert np.array_equal(covariance_operator(f) @ v, apply_covariance(f, v))


def test_reduced_operator_examples():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(6, 6))
    cov = A @ A.T
    v = rng.normal(size=6)
    assert np.allclose(reduced_operator(sp.identity(6), cov) @ v, cov @ v, rtol=1e-14)
    row = sp.csr_matrix(([1.0], ([0], [2])), shape=(1, 6))
    assert (reduced_operator(row, cov) @ np.ones(1))[0] == pytest.approx(cov[2, 2], rel=1e-15)
    assert np.allclose(reduced_operator(sp.identity(6), lambda x: cov @ x) @ v, cov @ v, rtol=1e-14)


def test_reduced_operator_matches_dense():
    prob = elliptic_problem(*square_grid(4), np.zeros(16), np.zeros(20), box=UNIT_BOX)
    lay = prob.layout
    theta = dense_kernel_matrix(K52, lay.X, lay.coef)
    _, DF = prob.F_and_DF(np.random.default_rng(5).normal(size=lay.N))
    v = np.random.default_rng(6).normal(size=lay.M)
    ref = DF.toarray() @ theta @ DF.toarray().T @ v
    got = reduced_operator(DF, theta) @ v
    assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_reduced_operator_is_linear(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(8, 8))
    J = sp.csr_matrix(rng.normal(size=(5, 8)))
    op = reduced_operator(J, A @ A.T)
    u, v = rng.normal(size=(2, 5))
    a, b = rng.normal(size=2)
    assert np.allclose(op @ (a * u + b * v), a * (op @ u) + b * (op @ v), rtol=1e-10, atol=1e-10)


def test_pcg_identity_one_iteration():
    b = np.random.default_rng(7).normal(size=20)
    x, rep = pcg(np.eye(20), None, b)
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(x, b, rtol=1e-15)


def test_pcg_random_spd_matches_direct():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(50, 50))
    A = A @ A.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    x, rep = pcg(A, None, b)
    ref = np.linalg.solve(A, b)
    assert rep.converged and rep.relative_residuals[-1] <= DEFAULT_TOL
    assert np.linalg.norm(x - ref) <= 1e-7 * np.linalg.norm(ref)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 30))
def test_pcg_terminates_within_n(seed, n):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    A = Q @ np.diag(np.linspace(1.0, 10.0, n)) @ Q.T
    b = rng.normal(size=n)
    x, rep = pcg(A, None, b, tol=1e-12, maxit=n + 5)
    assert rep.converged and rep.iterations <= n
    assert rep.relative_residuals[-1] <= 1e-12
    assert all(r >= 0 for r in rep.relative_residuals)


def test_pcg_breakdown_flag():
    A = np.diag([1.0, -1.0])
    _, rep = pcg(A, None, np.array([1.0, 1.0]))
    assert rep.breakdown and not rep.converged


def test_pcg_zero_rhs_and_warm_start():
    x, rep = pcg(np.eye(3), None, np.zeros(3))
    assert rep.converged and rep.iterations == 0 and not np.any(x)
    b = np.ones(3)
    x, rep = pcg(np.eye(3), None, b, x0=b)
    assert rep.iterations == 0 and rep.converged


def test_pcg_preconditioner_is_used():
    rng = np.random.default_rng(9)
    d = np.logspace(0, 6, 40)
    b = rng.normal(size=40)
    _, plain = pcg(np.diag(d), None, b, maxit=500)
    _, pre = pcg(np.diag(d), np.diag(1 / d), b)
    assert pre.iterations == 1 and plain.iterations > 10


def test_pcg_options():
    with pytest.raises(ValueError):
        pcg(np.eye(2), None, np.ones(2), tol=0)
    assert default_maxit(100) == 200
    _, rep = pcg(np.diag(np.logspace(0, 8, 50)), None, np.ones(50), maxit=3)
    assert rep.iterations == 3 and not rep.converged
