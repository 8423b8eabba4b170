import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feynslice import _backend
from feynslice.dynamics import (
    PhasePoint, default_mu, hamiltonian, prepare_pairs, scaled_hamiltonian_flow, shoot_charted,
    shoot_lowest_energy,
)
from feynslice.errors import MomentumBoundError, NoUniqueGeodesicError
from feynslice.manifold import Circle, FlatTorus, RoundSphere
from feynslice.potential import Potential

from oracles import flat_action

COS = Potential.cosine(1.0, (1.0,))
COS2 = Potential.tabulated([{"amplitude": 0.7, "wavevector": [1.0, 0.0]},
                            {"amplitude": -0.4, "wavevector": [1.0, 2.0], "phase": 0.3}])
SPH = Potential.cosine(0.8, (0.0, 0.0, 1.0))


def test_free_circle_momentum_is_displacement():
    p = shoot_lowest_energy(Circle(), Potential.zero(), 0.2, [1.3], [1.0])
    assert p.eta0[0] == pytest.approx(0.3, abs=1e-13)
    assert p.flow.action_phi == pytest.approx(flat_action(0.3, 1.0), abs=1e-13)


def test_free_torus_jacobian_is_identity():
    p = shoot_lowest_energy(FlatTorus(), Potential.zero(), 0.1, [1.0, 2.0], [0.5, 1.0])
    np.testing.assert_allclose(p.flow.jac_x_eta, np.eye(2), atol=1e-13)
    np.testing.assert_allclose(p.flow.endpoint.x, [1.0, 2.0], atol=1e-13)


def test_sphere_meridian_shot_in_rotated_chart():
    m = RoundSphere()
    p = shoot_lowest_energy(m, Potential.zero(), 0.3, [1.2, 0.4], [0.4, 0.4])
    assert np.linalg.norm(p.eta0) == pytest.approx(0.8, abs=1e-12)
    assert p.residual < 1e-12


@pytest.mark.parametrize("m,V,x", [
    (Circle(), COS, [0.4]),
    (FlatTorus(), COS2, [0.3, -0.2]),
    (RoundSphere(), SPH, [1.4, 0.2]),
])
def test_flow_conserves_scaled_energy(m, V, x):
    t = 0.4
    start = PhasePoint(x, np.full(m.dim, 0.3))
    res = scaled_hamiltonian_flow(m, V, t, start, steps=32)
    e0 = hamiltonian(m, V, t, start.x, start.xi)[0]
    e1 = hamiltonian(m, V, t, res.endpoint.x, res.endpoint.xi)[0]
    assert e1 == pytest.approx(e0, abs=1e-12)


@pytest.mark.parametrize("m,V,x", [
    (Circle(), COS, [0.4]),
    (FlatTorus(), COS2, [0.3, -0.2]),
    (RoundSphere(), SPH, [1.4, 0.2]),
])
def test_variational_matrix_is_symplectic(m, V, x):
    res = scaled_hamiltonian_flow(m, V, 0.5, PhasePoint(x, np.full(m.dim, 0.25)))
    M = res.variational_matrix
    n = m.dim
    J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    np.testing.assert_allclose(M.T @ J @ M, J, atol=1e-11)


def test_variational_matrix_matches_finite_differences():
    m, V = FlatTorus(), COS2
    x0, xi0, h = np.array([0.3, -0.2]), np.array([0.2, 0.25]), 1e-6
    res = scaled_hamiltonian_flow(m, V, 0.5, PhasePoint(x0, xi0))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        p = scaled_hamiltonian_flow(m, V, 0.5, PhasePoint(x0, xi0 + e))
        q = scaled_hamiltonian_flow(m, V, 0.5, PhasePoint(x0, xi0 - e))
        fd = (m.unwrap(q.endpoint.x, p.endpoint.x) - q.endpoint.x) / (2 * h)
        np.testing.assert_allclose(fd, res.jac_x_eta[:, j], atol=1e-8)


@given(st.floats(0.05, 0.5), st.floats(0, 2 * np.pi), st.floats(-2.5, 2.5))
@settings(max_examples=40, deadline=None)
def test_shooting_hits_target_and_is_time_reversible(t, y, dx):
    m = Circle()
    x = np.mod(y + dx, 2 * np.pi)
    fwd = shoot_lowest_energy(m, COS, t, [x], [y])
    back = shoot_lowest_energy(m, COS, t, [y], [x])
    assert fwd.residual < 1e-11
    assert np.cos(fwd.flow.endpoint.x[0] - x) == pytest.approx(1.0, abs=1e-20)
    assert fwd.flow.action_phi == pytest.approx(back.flow.action_phi, abs=1e-11)


def test_momentum_bound_is_enforced():
    with pytest.raises(MomentumBoundError):
        shoot_lowest_energy(Circle(), Potential.zero(), 0.1, [1.0], [0.0], mu=0.5)


def test_far_pairs_rejected():
    with pytest.raises(NoUniqueGeodesicError):
        shoot_lowest_energy(Circle(), Potential.zero(), 0.1, [np.pi], [0.0])


def test_slice_bound():
    with pytest.raises(ValueError):
        shoot_lowest_energy(Circle(), COS, 0.3, [1.0], [0.5], slice_bound=0.2)


@pytest.mark.skipif("compiled" not in _backend.available(), reason="extension not built")
@pytest.mark.parametrize("m,V", [(Circle(), COS), (FlatTorus(), COS2), (RoundSphere(), SPH)])
def test_compiled_and_python_backends_agree(m, V):
    rng = np.random.default_rng(4)
    if m.kind == "sphere":
        X = np.stack([rng.uniform(0.5, 2.6, 30), rng.uniform(0, 6, 30)], -1)
        Y = np.stack([rng.uniform(0.5, 2.6, 30), rng.uniform(0, 6, 30)], -1)
        keep = m.geodesic_distance(X, Y) < 2.5
        X, Y = X[keep], Y[keep]
    else:
        Y = rng.uniform(0, 6, (30, m.dim))
        X = Y + rng.uniform(-1.2, 1.2, (30, m.dim))
    xc, yc, Q = prepare_pairs(m, X, Y)
    a = shoot_charted(m, V, 0.3, xc, yc, Q, mu=default_mu(m), backend="compiled")
    b = shoot_charted(m, V, 0.3, xc, yc, Q, mu=default_mu(m), backend="python")
    for key in ("eta", "phi", "jac_x_eta", "xi1"):
        np.testing.assert_allclose(a[key], b[key], atol=1e-11, err_msg=key)
    assert np.array_equal(a["status"], b["status"])
