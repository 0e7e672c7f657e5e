import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gppde.geometry import BoxBoundary, Empty, dists_to_set, interval_grid, maximin_order, square_grid
from gppde.kernels import DiffOp, MaternKernel, dense_kernel_matrix
from gppde.measurements import (BOUNDARY_DIRAC, COMBINATION, Measurement, order_boundary_first,
                                order_interior_first, reduce_measurements, standard_layout)
from gppde.pde import elliptic_problem, monge_ampere_problem
from oracles import brute_maximin

UNIT = BoxBoundary((0.0, 0.0), (1.0, 1.0))


def side_points():
    t = np.array([0.25, 0.5, 0.75])
    return np.concatenate([np.stack([t, 0 * t], 1), np.stack([t, 0 * t + 1], 1),
                           np.stack([0 * t, t], 1), np.stack([0 * t + 1, t], 1)])


def test_layout_sizes():
    interior, _ = square_grid(3)
    assert standard_layout("elliptic", interior, side_points()).N == 30
    xi, xb = interval_grid(7)
    assert standard_layout("burgers", xi, xb).N == 9 + 2 * 7
    gi, gb = square_grid(4)
    lay = standard_layout("monge-ampere", gi, gb)
    assert lay.N == lay.M + 3 * 16


def test_layout_errors():
    with pytest.raises(ValueError):
        standard_layout("elliptic", np.zeros((0, 2)), side_points())
    with pytest.raises(ValueError):
        standard_layout("heat", *square_grid(2))
    with pytest.raises(ValueError):
        standard_layout("elliptic", np.array([[0.25, 0.0]]), side_points())


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(0, (0.1, 0.1), ((DiffOp.identity(), 0.0),))
    with pytest.raises(ValueError):
        Measurement(0, (0.1, 0.1), ((DiffOp.identity(), float("nan")),))


def test_interior_first_small():
    X = np.array([[0.2, 0.2], [0.8, 0.8], [0.5, 0.1]])
    lay = standard_layout("elliptic", X[:2], X[2:])
    o = order_interior_first(lay)
    assert set(o.perm[:3].tolist()) == {0, 1, 2}
    assert set(o.perm[3:].tolist()) == {3, 4}
    assert o.lengthscales[3] == o.lengthscales[4] == o.lengthscales[2]


def test_all_dirac_layout_reduces_to_maximin():
    X, _ = square_grid(4)
    lay = standard_layout("elliptic", X, None)
    dirac_only = reduce_measurements(lay, sp.eye(lay.N, format="csr")[:lay.M])
    o = order_interior_first(dirac_only)
    ref = maximin_order(X, Empty())
    assert np.array_equal(o.perm, ref.perm) and np.array_equal(o.lengthscales, ref.lengthscales)


def test_interior_first_elliptic_grid():
    interior, boundary = square_grid(3)
    lay = standard_layout("elliptic", interior, boundary)
    o = order_interior_first(lay)
    M = lay.M
    pos = np.empty(lay.N, dtype=int)
    pos[o.perm] = np.arange(lay.N)
    assert pos[lay.index_of("dirac")].max() < pos[lay.index_of("laplacian")].min()
    perm, lengths = brute_maximin(lay.points, np.full(M, np.inf))
    assert o.perm[:M].tolist() == perm
    expected = lengths + [lengths[-1]] * (lay.N - M)
    assert o.lengthscales.tolist() == expected
    # Laplacians follow the Dirac ranks of their base points
    rank = {p: q for q, p in enumerate(perm)}
    lap_points = lay.point_index[o.perm[M:]]
    assert [rank[p] for p in lap_points] == sorted(rank[p] for p in lap_points)


def test_monge_ampere_blocks_sorted_by_type():
    lay = standard_layout("monge-ampere", *square_grid(2))
    o = order_interior_first(lay)
    kinds = lay.kinds[o.perm[lay.M:]].tolist()
    assert kinds == ["d11"] * 4 + ["d22"] * 4 + ["d12"] * 4


def test_burgers_blocks_sorted_by_order():
    lay = standard_layout("burgers", *interval_grid(5))
    o = order_interior_first(lay)
    assert lay.kinds[o.perm[lay.M:]].tolist() == ["dx"] * 5 + ["dxx"] * 5


def test_reduce_elliptic_weights():
    interior, boundary = square_grid(2)
    for zval, dirac_w in [(0.0, 0.0), (1.0, 3.0)]:
        prob = elliptic_problem(interior, boundary, np.zeros(4), np.zeros(12), box=UNIT)
        z = np.full(prob.layout.N, zval)
        _, DF = prob.F_and_DF(z)
        red = reduce_measurements(prob.layout, DF)
        row = red.coef[0]
        assert row.tolist() == [dirac_w, 0, 0, -1, 0, -1]
        assert red.roles[:4].tolist() == [COMBINATION] * 4
        assert red.roles[4:].tolist() == [BOUNDARY_DIRAC] * 12
        assert np.all(red.coef[4:, 0] == 1) and np.all(red.coef[4:, 1:] == 0)


def test_reduce_monge_ampere_at_identity_hessian():
    prob = monge_ampere_problem(*square_grid(2), np.ones(4), np.zeros(12), box=UNIT)
    z = np.zeros(prob.layout.N)
    z[prob.slots["d11"]] = 1.0
    z[prob.slots["d22"]] = 1.0
    _, DF = prob.F_and_DF(z)
    red = reduce_measurements(prob.layout, DF)
    # primitive order: id, d0, d1, d00, d01, d11
    assert red.coef[0].tolist() == [0, 0, 0, 1, 0, 1]


def test_reduce_rejects_mixed_base_points():
    lay = standard_layout("elliptic", *square_grid(2))
    J = sp.lil_matrix((1, lay.N))
    J[0, 0] = 1.0
    J[0, 1] = 1.0
    with pytest.raises(ValueError, match="different base points"):
        reduce_measurements(lay, J)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 3), st.floats(0.1, 3))
def test_reduce_is_linear(seed, alpha, beta):
    prob = elliptic_problem(*square_grid(3), np.zeros(9), np.zeros(16), box=UNIT)
    rng = np.random.default_rng(seed)
    _, A = prob.F_and_DF(rng.normal(size=prob.layout.N))
    _, B = prob.F_and_DF(rng.normal(size=prob.layout.N))
    combo = alpha * A + beta * B
    ra = reduce_measurements(prob.layout, A).coef
    rb = reduce_measurements(prob.layout, B).coef
    rc = reduce_measurements(prob.layout, combo).coef
    assert np.allclose(rc, alpha * ra + beta * rb, rtol=1e-12, atol=1e-12)


def test_reduced_kernel_matrix_identity():
    k = MaternKernel(2.5, 0.3)
    prob = elliptic_problem(*square_grid(3), np.zeros(9), np.zeros(16), box=UNIT)
    z = np.random.default_rng(3).normal(size=prob.layout.N)
    _, DF = prob.F_and_DF(z)
    red = reduce_measurements(prob.layout, DF)
    theta = dense_kernel_matrix(k, prob.layout.X, prob.layout.coef)
    lhs = dense_kernel_matrix(k, red.X, red.coef)
    rhs = DF @ theta @ DF.T
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(rhs).max())


def test_boundary_first_small():
    X = np.array([[0.5, 0.5], [0.0, 0.5], [1.0, 0.5], [0.5, 0.0], [0.5, 1.0]])
    lay = standard_layout("elliptic", X[:1], X[1:], UNIT)
    red = reduce_measurements(lay, sp.eye(lay.N, format="csr")[:lay.M])
    o = order_boundary_first(red)
    assert set(o.perm[:4].tolist()) == {1, 2, 3, 4}
    assert o.perm[4] == 0 and o.lengthscales[4] == 0.5


def test_boundary_first_without_boundary():
    X, _ = square_grid(3)
    lay = standard_layout("elliptic", X, None, UNIT)
    prob_DF = sp.eye(lay.N, format="csr")[:lay.M]
    red = reduce_measurements(lay, prob_DF)
    red.roles[:] = COMBINATION
    o = order_boundary_first(red)
    ref = maximin_order(X, UNIT)
    assert np.array_equal(o.perm, ref.perm) and np.array_equal(o.lengthscales, ref.lengthscales)


def test_boundary_first_reduced_elliptic_grid():
    interior, boundary = square_grid(3)
    prob = elliptic_problem(interior, boundary, np.zeros(9), np.zeros(16), box=UNIT)
    _, DF = prob.F_and_DF(np.zeros(prob.layout.N))
    red = reduce_measurements(prob.layout, DF)
    o = order_boundary_first(red)
    bperm, blen = brute_maximin(boundary, np.full(16, np.inf))
    iperm, ilen = brute_maximin(interior, dists_to_set(interior, UNIT))
    assert o.perm.tolist() == [9 + b for b in bperm] + iperm
    assert o.lengthscales.tolist() == blen + ilen
