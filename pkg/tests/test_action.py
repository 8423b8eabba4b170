import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feynslice.action import (
    CutoffSpec, action_jet, cutoff_value, diagonal_laplacian_of_a, hj_residual,
    residual_amplitudes_r0_r1, transport_residual, vanvleck_fd_oracle,
)
from feynslice.manifold import Circle, FlatTorus, RoundSphere
from feynslice.potential import Potential

from oracles import cutoff as cutoff_oracle, flat_action, jacobi_amplitude

ZERO = Potential.zero()
COS = Potential.cosine(1.0, (1.0,))


@given(st.floats(0.01, 1.0), st.floats(0, 6.2), st.floats(-2.8, 2.8))
def test_free_circle_jet_closed_form(t, y, dx):
    jet = action_jet(Circle(), ZERO, t, [y + dx], [y])
    assert jet.s_action == pytest.approx(flat_action(dx, t), rel=1e-12, abs=1e-12)
    assert jet.vanvleck_d == pytest.approx(1 / t, rel=1e-12)
    assert jet.amplitude_a == pytest.approx(1.0, abs=1e-12)
    assert jet.grad_x_s[0] == pytest.approx(dx / t, rel=1e-12, abs=1e-10)
    assert jet.grad_y_s[0] == pytest.approx(-dx / t, rel=1e-12, abs=1e-10)


def test_free_torus_mixed_hessian():
    jet = action_jet(FlatTorus(), ZERO, 0.2, [1.0, 1.5], [0.4, 0.9])
    np.testing.assert_allclose(jet.mixed_hessian, -np.eye(2) / 0.2, atol=1e-10)
    assert jet.vanvleck_d == pytest.approx(0.2**-2, rel=1e-12)


@pytest.mark.parametrize("d", [0.1, 0.7, 1.5, 2.3, 2.8])
def test_sphere_amplitude_matches_jacobi_field(d):
    jet = action_jet(RoundSphere(), ZERO, 0.3, [np.pi / 2, d], [np.pi / 2, 0.0])
    assert jet.amplitude_a == pytest.approx(jacobi_amplitude(d), abs=1e-9)
    assert jet.s_action == pytest.approx(d * d / 0.6, rel=1e-12)


@pytest.mark.parametrize("m,V,x,y", [
    (Circle(), COS, [0.9], [0.1]),
    (FlatTorus(), Potential.cosine(0.5, (1.0, 1.0)), [0.9, 0.2], [0.1, 0.7]),
    (RoundSphere(), Potential.cosine(0.5, (0.0, 1.0, 0.0)), [1.0, 0.3], [1.9, 1.2]),
])
def test_vanvleck_matches_finite_difference_oracle(m, V, x, y):
    jet = action_jet(m, V, 0.2, x, y)
    assert jet.vanvleck_d == pytest.approx(vanvleck_fd_oracle(m, V, 0.2, x, y), rel=1e-6)


@pytest.mark.parametrize("m,V,x,y", [
    (Circle(), COS, [0.9], [0.1]),
    (FlatTorus(), Potential.cosine(0.5, (1.0, 1.0)), [0.9, 0.2], [0.1, 0.7]),
    (RoundSphere(), ZERO, [1.0, 0.3], [1.9, 1.2]),
    (RoundSphere(), Potential.cosine(0.5, (0.0, 1.0, 0.0)), [1.0, 0.3], [1.9, 1.2]),
])
def test_pde_residuals(m, V, x, y):
    assert hj_residual(m, V, 0.15, x, y) < 1e-7
    assert transport_residual(m, V, 0.15, x, y) < 1e-5


def test_curvature_identity_sphere_and_torus():
    assert diagonal_laplacian_of_a(RoundSphere(), ZERO, [1.1, 0.4]) == pytest.approx(1 / 3, abs=2e-3)
    assert diagonal_laplacian_of_a(RoundSphere(2.0), ZERO, [1.1, 0.4]) == pytest.approx(1 / 12, abs=2e-3)
    assert abs(diagonal_laplacian_of_a(FlatTorus(), ZERO, [1.0, 2.0])) < 1e-5


def test_r0_vanishes_on_sphere_inside_cutoff():
    # Lap a / 2 = R / 12 on the diagonal, up to O(d^2) and O(t^2)
    r0, r1 = residual_amplitudes_r0_r1(RoundSphere(), ZERO, CutoffSpec(1.0, 2.0), 0.01, [1.2, 0.3], [1.2, 0.31])
    assert abs(r0) < 1e-3
    assert r1 == 0.0


def test_r1_lives_in_transition_band():
    spec = CutoffSpec(0.5, 1.0)
    _, inner = residual_amplitudes_r0_r1(Circle(), ZERO, spec, 0.1, [0.3], [0.0])
    _, band = residual_amplitudes_r0_r1(Circle(), ZERO, spec, 0.1, [0.75], [0.0])
    assert inner == 0.0
    assert band > 0.1


@given(st.floats(0.05, 1.0), st.floats(0.1, 1.0), st.floats(0, 3.0))
def test_cutoff_matches_oracle_and_is_monotone(r_in, gap, d):
    spec = CutoffSpec(r_in, r_in + gap)
    v = cutoff_value(spec, d)
    assert v == pytest.approx(float(cutoff_oracle(d, spec.r_in, spec.r_out)), abs=1e-14)
    assert 0.0 <= v <= 1.0
    assert cutoff_value(spec, d + 1e-3) <= v + 1e-15
    if d <= r_in:
        assert v == 1.0
    if d >= r_in + gap:
        assert v == 0.0


def test_cutoff_validation():
    with pytest.raises(ValueError):
        CutoffSpec(1.0, 0.5)
    with pytest.raises(ValueError):
        CutoffSpec(1.0, 3.0).validate(Circle())
    assert CutoffSpec.default(Circle()).r_out == pytest.approx(0.9 * np.pi)
    assert CutoffSpec.default(Circle()).r_in == pytest.approx(0.45 * np.pi)
