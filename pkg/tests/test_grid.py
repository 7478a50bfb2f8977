import numpy as np
import pytest

from particula import grid as gm

ORDERS = (1, 2, 3)


def _grid3():
    return gm.StructuredGrid([8, 9, 7], [1.0, 1.3, 0.7], periodic=True)


def _points(n=10000, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 3)) * [1.0, 1.3, 0.7]


@pytest.mark.parametrize("order", ORDERS)
def test_partition_of_unity(order):
    g = _grid3()
    x = _points()
    f = g.scalar_field()
    gm.p2g(g, f, x, np.ones(x.shape[0]), order=order)
    assert abs(f.sum() - x.shape[0]) < 1e-14 * x.shape[0]
    ones = np.ones(tuple(g.nodes))
    vals = gm.g2p(g, ones, x, order=order)
    assert np.max(np.abs(vals - 1.0)) < 1e-14


@pytest.mark.parametrize("order", ORDERS)
def test_gradient_weights_sum_to_zero(order):
    g = _grid3()
    x = _points(2000, seed=1)
    ones = np.ones(tuple(g.nodes))
    grad = gm.g2p(g, ones, x, order=order, op="gradient")
    h = g.spacing.min()
    assert np.max(np.abs(grad)) < 1e-12 / h


@pytest.mark.parametrize("order", ORDERS)
def test_affine_field_exactness(order):
    # an affine nodal field is reproduced exactly away from the periodic seam
    g = gm.StructuredGrid([16, 16, 16], [2.0, 2.0, 2.0], periodic=True)
    coords = g.node_coords()
    X, Y, Z = np.meshgrid(*coords, indexing="ij")
    a = np.array([0.3, -1.2, 0.7])
    field = 0.5 + a[0] * X + a[1] * Y + a[2] * Z
    rng = np.random.default_rng(2)
    x = 0.5 + rng.random((3000, 3))     # interior: stencil avoids the seam
    vals = gm.g2p(g, field, x, order=order)
    want = 0.5 + x @ a
    assert np.max(np.abs(vals - want)) < 1e-12
    grad = gm.g2p(g, field, x, order=order, op="gradient")
    assert np.max(np.abs(grad - a)) < 1e-11


@pytest.mark.parametrize("order", ORDERS)
def test_p2g_g2p_adjointness(order):
    rng = np.random.default_rng(3)
    g = _grid3()
    x = _points(10000, seed=4)
    v = rng.standard_normal(x.shape[0])
    u = rng.standard_normal(tuple(g.nodes))
    f = g.scalar_field()
    gm.p2g(g, f, x, v, order=order)
    lhs = float(np.sum(u * f))
    rhs = float(gm.g2p(g, u, x, order=order) @ v)
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


@pytest.mark.parametrize("order", ORDERS)
def test_charge_conservation_under_motion(order):
    # total deposited charge is independent of particle positions
    g = _grid3()
    rng = np.random.default_rng(5)
    q = rng.standard_normal(500)
    for seed in (6, 7):
        f = g.scalar_field()
        gm.p2g(g, f, _points(500, seed=seed), q, order=order)
        assert abs(f.sum() - q.sum()) < 1e-12


@pytest.mark.parametrize("order", ORDERS)
def test_gradient_deposit_matches_fd_of_value_deposit(order):
    g = _grid3()
    x = _points(200, seed=8)
    v = np.ones(200)
    gf = g.vector_field()
    gm.p2g(g, gf, x, v, order=order, op="gradient")
    eps = 1e-6
    for a in range(3):
        xp = x.copy(); xp[:, a] += eps
        xm = x.copy(); xm[:, a] -= eps
        fp = g.scalar_field(); gm.p2g(g, fp, xp, v, order=order)
        fm = g.scalar_field(); gm.p2g(g, fm, xm, v, order=order)
        assert np.max(np.abs(gf[..., a] - (fp - fm) / (2 * eps))) < 1e-5


def test_g2p_gradient_matches_fd_of_value_gather():
    g = _grid3()
    rng = np.random.default_rng(9)
    u = rng.standard_normal(tuple(g.nodes))
    x = _points(300, seed=10)
    for order in ORDERS:
        grad = gm.g2p(g, u, x, order=order, op="gradient")
        eps = 1e-6
        for a in range(3):
            xp = x.copy(); xp[:, a] += eps
            xm = x.copy(); xm[:, a] -= eps
            fd = (gm.g2p(g, u, xp, order=order) - gm.g2p(g, u, xm, order=order)) / (2 * eps)
            assert np.allclose(grad[:, a], fd, atol=2e-4)


def test_divergence_gather():
    g = _grid3()
    rng = np.random.default_rng(12)
    F = rng.standard_normal((*g.nodes, 3))
    x = _points(100, seed=13)
    div = gm.g2p(g, F, x, order=2, op="divergence")
    parts = sum(gm.g2p(g, F[..., a], x, order=2, op="gradient")[:, a] for a in range(3))
    assert np.allclose(div, parts, atol=1e-12)


def test_spline_weights_single_point():
    g = gm.StructuredGrid([8, 8], [1.0, 1.0])
    st = gm.spline_weights(2, [0.37, 0.61], g)
    assert np.allclose(st.weights.sum(axis=1), 1.0)
    assert np.allclose(st.gradients.sum(axis=1), 0.0, atol=1e-12)


def test_non_periodic_bounds_checked():
    g = gm.StructuredGrid([4], [1.0], periodic=False)
    f = g.scalar_field()
    gm.p2g(g, f, np.array([[0.5]]), np.array([1.0]))
    with pytest.raises(ValueError):
        gm.p2g(g, g.scalar_field(), np.array([[1.2]]), np.array([1.0]))


def test_unsupported_order_rejected():
    g = _grid3()
    with pytest.raises(ValueError):
        gm.p2g(g, g.scalar_field(), _points(5), np.ones(5), order=4)
