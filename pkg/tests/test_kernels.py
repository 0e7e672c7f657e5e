import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gppde.kernels import (DiffOp, MaternKernel, bilinear_entry, covariance, dense_kernel_matrix, primitive_ops,
                           radial_table)
from gppde.measurements import Measurement, standard_layout
from gppde.geometry import square_grid
from oracles import matern_mp, richardson

# Bessel-function reference for nu=5/2, lengthscale 0.3, distance 0.3 (mpmath, 30 digits)
MATERN52_AT_LENGTHSCALE = 0.523994108831820310592713250761
# exact limit of Laplacian_x Laplacian_y k at zero lag for nu=5/2, lengthscale 0.3, d=2 (computer algebra)
LAPLAP_ZERO_LAG = 2000000 / 243

OPS_2D = [DiffOp.identity(), DiffOp.d(0, dim=2), DiffOp.d(1, dim=2), DiffOp.d(0, 0), DiffOp.d(0, 1),
          DiffOp.d(1, 1), DiffOp.lap()]


def fd_terms(op: DiffOp, d: int):
    if op.laplacian:
        return [(1, [k, k]) for k in range(d)]
    axes = []
    for k, g in enumerate(op.partial):
        axes += [k] * g
    return [(1, axes)]


def test_zero_lag_is_amplitude():
    assert covariance(MaternKernel(2.5, 0.3), [0.2, 0.7], [0.2, 0.7]) == 1.0
    assert MaternKernel(3.5, 0.3, amplitude=2.0).covariance([0.1], [0.1]) == 2.0


def test_value_at_one_lengthscale():
    k = MaternKernel(2.5, 0.3)
    val = k.covariance([0.0, 0.0], [0.3, 0.0])
    assert val == pytest.approx(MATERN52_AT_LENGTHSCALE, rel=1e-14)
    assert val == pytest.approx((1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5)), rel=1e-14)
    assert round(val, 5) == 0.52399


@pytest.mark.parametrize("nu", [2.5, 3.5, 4.5])
@pytest.mark.parametrize("r", [0.01, 0.2, 0.7, 2.0])
def test_closed_form_matches_bessel_form(nu, r):
    k = MaternKernel(nu, 0.3)
    assert k.covariance([0.0], [r]) == pytest.approx(float(matern_mp(nu, 0.3, r)), rel=1e-13)


def test_decays_to_zero():
    assert MaternKernel(3.5, 0.3).covariance([0.0], [1e3]) == 0.0


def test_radial_tables_nu52():
    t = radial_table(2)
    # h1 = -(a^2/3)(1+z)e^-z, h2 = (a^4/3)e^-z
    assert t[1, 4] == pytest.approx(-1 / 3) and t[1, 5] == pytest.approx(-1 / 3)
    assert t[2, 4] == pytest.approx(1 / 3) and np.count_nonzero(t[2]) == 1


def test_invalid_kernels():
    with pytest.raises(ValueError):
        MaternKernel(1.5, 0.3)
    with pytest.raises(ValueError):
        MaternKernel(2.5, -1.0)
    with pytest.raises(ValueError):
        DiffOp((3,))
    with pytest.raises(ValueError):
        MaternKernel(2.5, 0.3).check_order(3)


def test_primitive_op_layout():
    assert primitive_ops(2) == [(), (0,), (1,), (0, 0), (0, 1), (1, 1)]
    assert DiffOp.lap().coefficients(2).tolist() == [0, 0, 0, 1, 0, 1]


def test_same_point_dirac_pairs():
    k = MaternKernel(2.5, 0.3)
    x = (0.4, 0.6)
    dirac = Measurement.dirac(0, x)
    assert bilinear_entry(k, dirac, dirac) == 1.0
    assert bilinear_entry(k, Measurement.of(0, x, DiffOp.d(0, dim=2)), dirac) == 0.0


def test_same_point_laplacian_pair():
    k = MaternKernel(2.5, 0.3)
    m = Measurement.of(0, (0.4, 0.4), DiffOp.lap())
    val = bilinear_entry(k, m, m)
    assert val == pytest.approx(LAPLAP_ZERO_LAG, rel=1e-13)
    # finite differences: this entry is only C^0 beyond fourth order, so the leading error is O(h)
    fd = richardson(2.5, 0.3, [0.4, 0.4], fd_terms(DiffOp.lap(), 2), [0.4, 0.4], fd_terms(DiffOp.lap(), 2),
                    order=1)
    assert val == pytest.approx(fd, rel=1e-5)


def test_near_zero_lag_uses_limit():
    k = MaternKernel(2.5, 0.3)
    m = Measurement.of(0, (0.4, 0.4), DiffOp.lap())
    shifted = Measurement.of(1, (0.4 + 1e-13, 0.4), DiffOp.lap())
    assert bilinear_entry(k, m, shifted) == pytest.approx(bilinear_entry(k, m, m), rel=1e-12)


coords = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2.5, 3.5, 4.5]), st.tuples(coords, coords), st.tuples(coords, coords),
       st.integers(0, 6), st.integers(0, 6))
def test_entries_match_finite_differences(nu, x, y, ia, ib):
    if math.dist(x, y) < 0.05:
        y = (x[0] + 0.1, x[1] - 0.07)
    k = MaternKernel(nu, 0.3)
    opa, opb = OPS_2D[ia], OPS_2D[ib]
    val = bilinear_entry(k, Measurement.of(0, x, opa), Measurement.of(1, y, opb))
    fd = richardson(nu, 0.3, list(x), fd_terms(opa, 2), list(y), fd_terms(opb, 2))
    # entries can vanish by symmetry; scale by the Cauchy-Schwarz bound sqrt(K_aa K_bb)
    scale = math.sqrt(bilinear_entry(k, Measurement.of(0, x, opa), Measurement.of(0, x, opa))
                      * bilinear_entry(k, Measurement.of(1, y, opb), Measurement.of(1, y, opb)))
    assert abs(val - fd) <= 1e-5 * max(abs(fd), scale)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([3.5, 4.5]), coords, coords, st.sampled_from([[], [0], [0, 0]]),
       st.sampled_from([[], [0], [0, 0]]))
def test_entries_match_finite_differences_1d(nu, x, y, axa, axb):
    if abs(x - y) < 0.02:
        y = x + 0.05
    k = MaternKernel(nu, 0.02 * 10)
    opa, opb = DiffOp.d(*axa, dim=1), DiffOp.d(*axb, dim=1)
    val = bilinear_entry(k, Measurement.of(0, (x,), opa), Measurement.of(1, (y,), opb))
    fd = richardson(nu, 0.2, [x], [(1, axa)], [y], [(1, axb)])
    scale = math.sqrt(bilinear_entry(k, Measurement.of(0, (x,), opa), Measurement.of(0, (x,), opa))
                      * bilinear_entry(k, Measurement.of(1, (y,), opb), Measurement.of(1, (y,), opb)))
    assert abs(val - fd) <= 1e-5 * max(abs(fd), scale)


@settings(max_examples=60, deadline=None)
@given(st.tuples(coords, coords), st.tuples(coords, coords), st.integers(0, 6), st.integers(0, 6),
       st.sampled_from([2.5, 3.5, 4.5]))
def test_swap_symmetry(x, y, ia, ib, nu):
    k = MaternKernel(nu, 0.3)
    a = Measurement.of(0, x, OPS_2D[ia])
    b = Measurement.of(1, y, OPS_2D[ib])
    ab, ba = bilinear_entry(k, a, b), bilinear_entry(k, b, a)
    assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12 * max(1.0, abs(ab)))


@settings(max_examples=40, deadline=None)
@given(st.tuples(coords, coords), st.tuples(coords, coords), st.floats(0, 2 * math.pi),
       st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
def test_rigid_motion_invariance(x, y, angle, shift):
    k = MaternKernel(3.5, 0.3)
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    x2 = R @ np.array(x) + np.array(shift)
    y2 = R @ np.array(y) + np.array(shift)
    assert k.covariance(x2, y2) == pytest.approx(k.covariance(x, y), rel=1e-9, abs=1e-14)


def test_dense_matrix_small_cases():
    k = MaternKernel(2.5, 0.3)
    X = np.array([[0.0, 0.0]])
    C = np.zeros((1, 6))
    C[0, 0] = 1.0
    assert dense_kernel_matrix(k, X, C).tolist() == [[1.0]]
    X2 = np.array([[0.0, 0.0], [50.0, 0.0]])
    C2 = np.zeros((2, 6))
    C2[:, 0] = 1.0
    th = dense_kernel_matrix(k, X2, C2)
    assert th[0, 1] == pytest.approx(0.0, abs=1e-100) and np.all(np.diag(th) == 1.0)


def test_dense_elliptic_matrix_is_spd():
    interior, boundary = square_grid(3)
    lay = standard_layout("elliptic", interior, boundary)
    th = dense_kernel_matrix(MaternKernel(2.5, 0.3), lay.X, lay.coef)
    assert np.array_equal(th, th.T)
    np.linalg.cholesky(th)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 10), st.sampled_from([2.5, 3.5, 4.5]))
def test_kernel_matrix_positive_definite(seed, n, nu):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    # distinct points; each gets a random operator type
    C = np.stack([OPS_2D[i].coefficients(2) for i in rng.integers(0, len(OPS_2D), n)])
    th = dense_kernel_matrix(MaternKernel(nu, 0.3), X, C)
    if np.min(np.linalg.norm(X[:, None] - X[None], axis=2) + np.eye(n)) < 1e-3:
        return
    assert np.linalg.eigvalsh(th).min() > 0


def test_jitter_only_in_dense_oracle():
    k = MaternKernel(2.5, 0.3, jitter=1e-6)
    X = np.array([[0.1, 0.1]])
    C = np.zeros((1, 6))
    C[0, 0] = 1.0
    assert dense_kernel_matrix(k, X, C)[0, 0] == pytest.approx(1.0 + 1e-6)
    assert k.block(X, C, X, C)[0, 0] == 1.0
