import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feynslice.errors import ChartDomainError, NoUniqueGeodesicError
from feynslice.manifold import (
    Circle, FlatTorus, RoundSphere, curvature_oracle, equatorial_frame, rotate_chart,
    sphere_chart, sphere_embed,
)

angles = st.floats(0.25, np.pi - 0.25)
longitudes = st.floats(-np.pi, np.pi)


def test_circle_distance_wraps():
    m = Circle()
    assert m.geodesic_distance([0.1], [2 * np.pi - 0.1]) == pytest.approx(0.2)
    assert m.injectivity_radius == pytest.approx(np.pi)


def test_torus_log_map_is_minimal_displacement():
    m = FlatTorus((2.0, 3.0))
    v = m.log_map(np.array([0.1, 0.1]), np.array([1.9, 2.8]))
    np.testing.assert_allclose(v, [-0.2, -0.3], atol=1e-14)


def test_log_map_refuses_cut_locus():
    with pytest.raises(NoUniqueGeodesicError):
        Circle().log_map([0.0], [np.pi])


@pytest.mark.parametrize("m", [Circle(), FlatTorus(), RoundSphere(), RoundSphere(2.0)])
def test_curvature_matches_christoffel_oracle(m):
    x = np.full(m.dim, 1.1)
    assert curvature_oracle(m, x) == pytest.approx(m.scalar_curvature(x), abs=1e-6)


def test_sphere_chart_rejects_poles():
    with pytest.raises(ChartDomainError):
        RoundSphere().metric_at([0.05, 0.0])


@given(angles, longitudes, angles, longitudes)
@settings(max_examples=60, deadline=None)
def test_equatorial_frame_puts_arc_on_equator(t1, p1, t2, p2):
    m = RoundSphere()
    x, y = np.array([t1, p1]), np.array([t2, p2])
    Q = equatorial_frame(x, y)
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    xr, yr = rotate_chart(Q, x), rotate_chart(Q, y)
    assert xr[0] == pytest.approx(np.pi / 2, abs=1e-9)
    assert yr[0] == pytest.approx(np.pi / 2, abs=1e-9)
    # distance is invariant
    assert m.geodesic_distance(xr, yr) == pytest.approx(m.geodesic_distance(x, y), abs=1e-12)


@given(angles, longitudes)
def test_embed_chart_round_trip(th, ph):
    back = sphere_chart(sphere_embed([th, ph]))
    assert back[0] == pytest.approx(th, abs=1e-12)
    assert np.cos(back[1] - ph) == pytest.approx(1.0, abs=1e-12)


@given(angles, longitudes, angles, longitudes)
@settings(max_examples=60, deadline=None)
def test_sphere_log_map_has_geodesic_length(t1, p1, t2, p2):
    m = RoundSphere()
    x, y = np.array([t1, p1]), np.array([t2, p2])
    d = m.geodesic_distance(x, y)
    if d >= 0.95 * np.pi:
        return
    eta = m.log_map(y, x)
    g = m.metric_at(y).g_inv
    assert np.sqrt(eta @ g @ eta) == pytest.approx(d, abs=1e-10)


@pytest.mark.parametrize("m,res", [(Circle(), 16), (FlatTorus(), (8, 12)), (RoundSphere(1.5), 10)])
def test_grid_weights_sum_to_volume(m, res):
    g = m.build_grid(res)
    assert g.weights.sum() == pytest.approx(m.volume, rel=1e-13)


def test_sphere_grid_integrates_polynomials_exactly():
    m = RoundSphere()
    g = m.build_grid(8)
    z = sphere_embed(g.nodes)[:, 2]
    # int z^2 dA = 4 pi / 3 ; degree 14 is still exact for 8 Gauss nodes
    assert g.integrate(z**2) == pytest.approx(4 * np.pi / 3, rel=1e-13)
    assert g.integrate(z**14) == pytest.approx(4 * np.pi / 15, rel=1e-12)


def test_bad_parameters():
    with pytest.raises(ValueError):
        Circle(-1.0)
    with pytest.raises(ValueError):
        FlatTorus((1.0, 0.0))
    with pytest.raises(ValueError):
        RoundSphere().build_grid(2)
