"""Action jets, the Van Vleck determinant, the cutoff and PDE residuals.

With ``A = d x(1) / d eta`` from the variational equations, the generating
function relations give ``d_x Phi = xi(1)``, ``d_y Phi = -eta`` and
``d^2 Phi / dx dy = -A^{-T}``.  Hence

    D = (g(x) g(y))^{-1/2} t^{-n} / det A,   a = t^{n/2} sqrt(D).

All finite-difference diagnostics are taken in one fixed evaluation chart per
base pair (see :class:`LocalChart`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (
    DEFAULT_STEPS,
    default_mu,
    initial_guess,
    prepare_pairs,
    raise_for_status,
    shoot_charted,
)
from .errors import ConjugatePointError
from .manifold import Manifold, rotate_chart
from .potential import Potential

COND_LIMIT = 1e10
FD_SPACE = 1e-3
FD_TIME = 1e-4


@dataclass(frozen=True)
class CutoffSpec:
    r_in: float
    r_out: float

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ValueError("cutoff radii must satisfy 0 < r_in < r_out")

    @classmethod
    def default(cls, m: Manifold) -> "CutoffSpec":
        r_out = 0.9 * m.injectivity_radius
        return cls(0.5 * r_out, r_out)

    def validate(self, m: Manifold) -> "CutoffSpec":
        if self.r_out > 0.9 * m.injectivity_radius * (1 + 1e-12):
            raise ValueError("r_out must not exceed 0.9 x injectivity radius")
        return self


def _bump_f(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def cutoff_value(spec: CutoffSpec, d):
    """Smooth monotone cutoff: 1 for ``d <= r_in``, 0 for ``d >= r_out``."""
    d = np.asarray(d, dtype=float)
    s = np.clip((d - spec.r_in) / (spec.r_out - spec.r_in), 0.0, 1.0)
    a, b = _bump_f(1.0 - s), _bump_f(s)
    val = a / (a + b)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class ActionJet:
    t: float
    phi: float
    s_action: float
    grad_x_s: np.ndarray
    grad_y_s: np.ndarray
    mixed_hessian: np.ndarray
    vanvleck_d: float
    amplitude_a: float
    x_chart: np.ndarray = field(repr=False, default=None)
    y_chart: np.ndarray = field(repr=False, default=None)
    rotation: Optional[np.ndarray] = field(repr=False, default=None)


def metric_det(m: Manifold, xc) -> np.ndarray:
    """``det g`` at evaluation-chart point(s)."""
    xc = np.asarray(xc, dtype=float)
    if m.kind == "sphere":
        return m.radius**4 * np.sin(xc[..., 0]) ** 2
    return np.ones(xc.shape[:-1])


def metric_inv_diag(m: Manifold, xc) -> np.ndarray:
    """Diagonal of ``g^{-1}`` (all catalog metrics are diagonal in their charts)."""
    xc = np.asarray(xc, dtype=float)
    if m.kind == "sphere":
        r2 = m.radius**2
        return np.stack([np.full(xc.shape[:-1], 1 / r2), 1 / (r2 * np.sin(xc[..., 0]) ** 2)], -1)
    return np.ones(xc.shape)


def amplitudes_from_shoot(m: Manifold, t: float, xc, yc, out):
    """Vectorized ``(phi, S, a, D, det_A, cond_A)`` from a shooting result dict."""
    n = m.dim
    A = out["jac_x_eta"]
    detA = np.linalg.det(A)
    cond = np.linalg.cond(A) if len(A) else np.zeros(0)
    gg = metric_det(m, xc) * metric_det(m, yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = gg**-0.25 / np.sqrt(detA)
        D = gg**-0.5 * abs(t) ** (-n) / detA
    phi = out["phi"]
    return phi, phi / t, a, D, detA, cond


class LocalChart:
    """Fixed evaluation chart around a base pair ``(x, y)``.

    Perturbed points are given in chart coordinates; on the sphere the chart
    is rotated so the base path lies on the equator.
    """

    def __init__(self, m: Manifold, V: Potential, x, y, steps=DEFAULT_STEPS, mu=None, backend=None):
        self.m, self.V = m, V
        self.steps, self.backend = steps, backend
        self.mu = default_mu(m) if mu is None else mu
        xc, yc, Q = prepare_pairs(m, np.atleast_1d(x)[None], np.atleast_1d(y)[None])
        self.xc, self.yc = xc[0], yc[0]
        self.rotation = None if Q is None else Q[0]

    def to_original(self, pc):
        pc = np.atleast_2d(pc)
        if self.rotation is None:
            return pc
        return rotate_chart(self.rotation.T, pc)

    def shoot(self, t, xcs, ycs):
        xcs = np.atleast_2d(np.asarray(xcs, dtype=float))
        ycs = np.broadcast_to(np.atleast_2d(ycs), xcs.shape).copy()
        Q = None
        if self.rotation is not None:
            Q = np.broadcast_to(self.rotation, (len(xcs), 3, 3))
        out = shoot_charted(
            self.m, self.V, t, xcs, ycs, Q, mu=self.mu, steps=self.steps,
            backend=self.backend, eta0=initial_guess(self.m, xcs, ycs),
        )
        for code in out["status"]:
            raise_for_status(int(code), "local chart shooting")
        return out

    def amplitudes(self, t, xcs, ycs=None):
        ycs = self.yc if ycs is None else ycs
        xcs = np.atleast_2d(xcs)
        out = self.shoot(t, xcs, ycs)
        return out, amplitudes_from_shoot(self.m, t, xcs, np.broadcast_to(ycs, xcs.shape), out)

    def distance(self, xcs, ycs=None):
        ycs = self.yc if ycs is None else ycs
        xo = self.to_original(xcs)
        yo = self.to_original(np.broadcast_to(np.atleast_2d(ycs), np.shape(xo)))
        return np.atleast_1d(self.m.geodesic_distance(xo, yo))

    def potential(self, xcs):
        return self.V(self.m, self.to_original(xcs))


def action_jet(
    m: Manifold, V: Potential, t: float, x, y, steps=DEFAULT_STEPS, mu=None, backend=None
) -> ActionJet:
    if t <= 0:
        raise ValueError("action_jet requires t > 0")
    chart = LocalChart(m, V, x, y, steps, mu, backend)
    out, (phi, S, a, D, detA, cond) = chart.amplitudes(t, chart.xc[None])
    if not cond[0] < COND_LIMIT or detA[0] <= 0:
        raise ConjugatePointError(f"ill-conditioned endpoint Jacobian (cond={cond[0]:.3g})")
    A = out["jac_x_eta"][0]
    return ActionJet(
        t=float(t),
        phi=float(phi[0]),
        s_action=float(S[0]),
        grad_x_s=out["xi1"][0] / t,
        grad_y_s=-out["eta"][0] / t,
        mixed_hessian=-np.linalg.inv(A).T / t,
        vanvleck_d=float(D[0]),
        amplitude_a=float(a[0]),
        x_chart=chart.xc,
        y_chart=chart.yc,
        rotation=chart.rotation,
    )


def vanvleck_fd_oracle(m: Manifold, V: Potential, t: float, x, y, h: float = 1e-4, **kw) -> float:
    """``D`` from central differences of ``S`` in every ``(x_j, y_k)`` pair."""
    chart = LocalChart(m, V, x, y, **kw)
    n = m.dim
    E = np.eye(n) * h
    xs, ys = [], []
    for j in range(n):
        for k in range(n):
            for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                xs.append(chart.xc + sx * E[j])
                ys.append(chart.yc + sy * E[k])
    out = chart.shoot(t, np.array(xs), np.array(ys))
    S = (out["phi"] / t).reshape(n, n, 4)
    mixed = (S[..., 0] - S[..., 1] - S[..., 2] + S[..., 3]) / (4 * h * h)
    gg = metric_det(m, chart.xc) * metric_det(m, chart.yc)
    return float(gg**-0.5 * np.linalg.det(-mixed))


def _dt4(f, t, h):
    """Fourth-order central difference of ``f`` at ``t``."""
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)


def _grad_fd(fun, xc, h):
    """Richardson-extrapolated central gradient of a batched scalar/vector field."""
    n = len(xc)

    def central(hh):
        pts = np.concatenate([xc + hh * np.eye(n), xc - hh * np.eye(n)])
        v = fun(pts)
        return (v[:n] - v[n:]) / (2 * hh)

    return (4 * central(h / 2) - central(h)) / 3


def _second_fd(fun, xc, h):
    """Richardson-extrapolated pure second derivatives ``d_j d_j f`` and gradient."""
    n = len(xc)

    def central(hh):
        pts = np.concatenate([xc[None], xc + hh * np.eye(n), xc - hh * np.eye(n)])
        v = fun(pts)
        return (v[1 : n + 1] - 2 * v[0] + v[n + 1 :]) / hh**2, (v[1 : n + 1] - v[n + 1 :]) / (2 * hh)

    s1, g1 = central(h)
    s2, g2 = central(h / 2)
    return (4 * s2 - s1) / 3, (4 * g2 - g1) / 3


def laplacian_fd(m: Manifold, fun, xc, h=FD_SPACE):
    """Laplace-Beltrami ``g^{jj}(d_j d_j f - Gamma^i_{jj} d_i f)`` by finite differences."""
    xc = np.asarray(xc, dtype=float)
    sec, grad = _second_fd(fun, xc, h)
    ginv = metric_inv_diag(m, xc)
    if m.kind == "sphere":
        th = xc[0]
        # Gamma^theta_{phi phi} = -sin cos; the others with equal lower indices vanish
        corr = np.array([0.0, -np.sin(th) * np.cos(th) * grad[0]])
        return float(np.sum(ginv * (sec - corr)))
    return float(np.sum(ginv * sec))


def hj_residual(m: Manifold, V: Potential, t: float, x, y, h: float = FD_TIME, **kw) -> float:
    """``|dS/dt + |d_x S|_g^2 / 2 + V(x)|`` with the time derivative by finite differences.

    ``S = Phi / t``; the ``1/t`` factor is differentiated exactly and only the
    smooth ``Phi`` is differenced.
    """
    chart = LocalChart(m, V, x, y, **kw)
    phi_of = lambda tt: chart.shoot(tt, chart.xc[None], chart.yc[None])["phi"][0]
    base = chart.shoot(t, chart.xc[None], chart.yc[None])
    phi = base["phi"][0]
    xi1 = base["xi1"][0]
    dphi = _dt4(phi_of, t, h)
    ginv = metric_inv_diag(m, chart.xc)
    kinetic_minus_phi = 0.5 * np.sum(ginv * xi1 * xi1) - phi
    res = dphi / t + kinetic_minus_phi / t**2 + chart.potential(chart.xc[None])[0]
    return float(abs(res))


def transport_residual(m: Manifold, V: Potential, t: float, x, y, h_t: float = FD_TIME,
                       h_x: float = FD_SPACE, **kw) -> float:
    """``|d_t sqrt(D) + g(grad S, grad sqrt(D)) + sqrt(D) Lap S / 2|``.

    Evaluated through ``sqrt(D) = t^{-n/2} a``: the explicit powers of ``t``
    are differentiated exactly, ``d_t a``, ``d_x a`` and the divergence in
    ``Lap S`` by central differences.
    """
    chart = LocalChart(m, V, x, y, **kw)
    n = m.dim
    xc = chart.xc

    def a_at(tt, pts):
        return chart.amplitudes(tt, pts)[1][2]

    base_out, (_, _, a0, _, _, _) = chart.amplitudes(t, xc[None])
    a0 = a0[0]
    dadt = _dt4(lambda tt: a_at(tt, xc[None])[0], t, h_t)
    dadx = _grad_fd(lambda pts: a_at(t, pts), xc, h_x)
    dSdx = base_out["xi1"][0] / t
    ginv = metric_inv_diag(m, xc)

    def flux(pts):
        out = chart.shoot(t, pts, chart.yc[None])
        sq = np.sqrt(metric_det(m, pts))
        return (sq[:, None] * metric_inv_diag(m, pts) * out["xi1"] / t)

    div = _grad_fd(flux, xc, h_x)  # row j holds d_j F
    lap_S = np.trace(div) / np.sqrt(metric_det(m, xc))
    bracket = dadt - 0.5 * n * a0 / t + np.sum(ginv * dSdx * dadx) + 0.5 * a0 * lap_S
    return float(abs(t ** (-0.5 * n) * bracket))


def residual_amplitudes_r0_r1(m: Manifold, V: Potential, spec: CutoffSpec, t: float, x, y,
                              h: float = FD_SPACE, **kw):
    """``(r0, |r1|)`` of the WKB remainder at ``(t, x, y)``."""
    chart = LocalChart(m, V, x, y, **kw)
    xc = chart.xc
    R = m.scalar_curvature()

    def a_at(pts):
        return chart.amplitudes(t, pts)[1][2]

    def chi_at(pts):
        return cutoff_value(spec, chart.distance(pts))

    base_out, (_, _, a0, _, _, _) = chart.amplitudes(t, xc[None])
    a0 = a0[0]
    chi0 = float(chi_at(xc[None])[0])
    lap_a = laplacian_fd(m, a_at, xc, h)
    r0 = chi0 * (0.5 * lap_a - R * a0 / 12.0)
    ginv = metric_inv_diag(m, xc)
    dchi = _grad_fd(chi_at, xc, h)
    if not np.any(dchi) and chi0 == 1.0:
        return float(r0), 0.0
    da = _grad_fd(a_at, xc, h)
    lap_chi = laplacian_fd(m, chi_at, xc, h)
    dphi = base_out["xi1"][0]
    r1 = 1j * a0 * np.sum(ginv * dphi * dchi) + t * np.sum(ginv * da * dchi) + 0.5 * t * a0 * lap_chi
    return float(r0), float(abs(r1))


def diagonal_laplacian_of_a(m: Manifold, V: Potential, x0, h: float = FD_SPACE,
                            t_small=(0.01, 0.005), **kw) -> float:
    """``Lap_x a(0, x, x0)`` at ``x = x0``, extrapolated to ``t = 0`` in ``t^2``."""
    chart = LocalChart(m, V, x0, x0, **kw)
    t1, t2 = t_small
    vals = []
    for tt in (t1, t2):
        vals.append(laplacian_fd(m, lambda pts: chart.amplitudes(tt, pts)[1][2], chart.xc, h))
    l1, l2 = vals
    return float((l2 * t1**2 - l1 * t2**2) / (t1**2 - t2**2))
