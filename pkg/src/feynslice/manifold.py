"""Model compact manifolds: circle, flat torus and round 2-sphere.

Chart points are float arrays of shape ``(n,)`` (or ``(..., n)`` where noted).
The circle and torus use periodic angle-like coordinates; the sphere uses
colatitude/longitude ``(theta, phi)``.  Sphere computations near the poles are
carried out in a rotated chart where the region of interest sits on the
equator (see :func:`equatorial_frame`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import ChartDomainError, NoUniqueGeodesicError

POLE_MARGIN = 0.2


@dataclass(frozen=True)
class MetricData:
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det_g: float
    christoffel: np.ndarray  # christoffel[i, j, k] = Gamma^i_{jk}
    scalar_curvature: float


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Quadrature nodes with weights that already include the volume density."""

    manifold: "Manifold"
    nodes: np.ndarray  # (N, n)
    weights: np.ndarray  # (N,)
    resolution: Tuple[int, ...]
    shape: Tuple[int, ...] = field(default=())

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def key(self):
        return (self.manifold, self.resolution)

    def integrate(self, f: np.ndarray):
        return np.tensordot(self.weights, f, axes=(0, 0))

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Weighted inner product, linear in ``u``."""
        return np.sum(self.weights * u * np.conj(v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.weights * np.abs(u) ** 2)))


class Manifold:
    """Common interface of the catalog manifolds."""

    dim: int
    kind: str

    def metric_at(self, x) -> MetricData:
        raise NotImplementedError

    def geodesic_distance(self, x, y):
        raise NotImplementedError

    def log_map(self, y, x) -> np.ndarray:
        raise NotImplementedError

    @property
    def injectivity_radius(self) -> float:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError

    def build_grid(self, resolution) -> QuadratureGrid:
        raise NotImplementedError

    def scalar_curvature(self, x=None) -> float:
        raise NotImplementedError

    def check_chart(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(x, dtype=float))

    def _check_log_distance(self, d):
        if np.any(d >= self.injectivity_radius):
            raise NoUniqueGeodesicError(
                f"distance {float(np.max(d)):.6g} is not below the injectivity radius "
                f"{self.injectivity_radius:.6g}"
            )


def _wrap(delta, period):
    """Minimal-image representative of ``delta`` in ``[-period/2, period/2)``."""
    return delta - period * np.floor(delta / period + 0.5)


class _FlatPeriodic(Manifold):
    periods: Tuple[float, ...]

    def metric_at(self, x) -> MetricData:
        self.check_chart(x)
        n = self.dim
        return MetricData(
            g=np.eye(n),
            g_inv=np.eye(n),
            sqrt_det_g=1.0,
            christoffel=np.zeros((n, n, n)),
            scalar_curvature=0.0,
        )

    def scalar_curvature(self, x=None) -> float:
        return 0.0

    def check_chart(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.dim:
            raise ChartDomainError(f"expected chart points of dimension {self.dim}")
        return x

    def displacement(self, y, x):
        """Shortest displacement from ``y`` to ``x`` in chart coordinates."""
        x = self.check_chart(x)
        y = self.check_chart(y)
        return _wrap(x - y, np.asarray(self.periods))

    def unwrap(self, y, x):
        """Representative of ``x`` closest to ``y`` in the covering chart."""
        y = self.check_chart(y)
        return y + self.displacement(y, x)

    def geodesic_distance(self, x, y):
        d = np.sqrt(np.sum(self.displacement(y, x) ** 2, axis=-1))
        return float(d) if np.ndim(d) == 0 else d

    def log_map(self, y, x) -> np.ndarray:
        v = self.displacement(y, x)
        self._check_log_distance(np.sqrt(np.sum(v**2, axis=-1)))
        return v

    @property
    def injectivity_radius(self) -> float:
        return min(self.periods) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    def build_grid(self, resolution) -> QuadratureGrid:
        res = tuple(int(r) for r in np.broadcast_to(np.atleast_1d(resolution), (self.dim,)))
        if min(res) < 4:
            raise ValueError("resolution must be at least 4 per dimension")
        axes = [p * np.arange(r) / r for p, r in zip(self.periods, res)]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        w = np.prod([p / r for p, r in zip(self.periods, res)])
        weights = np.full(len(nodes), w)
        return QuadratureGrid(self, nodes, weights, res, shape=res)


@dataclass(frozen=True)
class Circle(_FlatPeriodic):
    circumference: float = 2 * np.pi
    kind = "circle"
    dim = 1

    def __post_init__(self):
        if not self.circumference > 0:
            raise ValueError("circumference must be positive")

    @property
    def periods(self) -> Tuple[float, ...]:
        return (float(self.circumference),)


@dataclass(frozen=True)
class FlatTorus(_FlatPeriodic):
    periods: Tuple[float, ...] = (2 * np.pi, 2 * np.pi)
    kind = "torus"

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if len(self.periods) < 1 or min(self.periods) <= 0:
            raise ValueError("torus periods must be positive")

    @property
    def dim(self) -> int:
        return len(self.periods)


def sphere_embed(x) -> np.ndarray:
    """Unit vector of chart point(s) ``(theta, phi)``; shape ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    th, ph = x[..., 0], x[..., 1]
    s = np.sin(th)
    return np.stack([s * np.cos(ph), s * np.sin(ph), np.cos(th)], axis=-1)


def sphere_chart(e) -> np.ndarray:
    """Inverse of :func:`sphere_embed` for (not necessarily unit) vectors."""
    e = np.asarray(e, dtype=float)
    rho = np.hypot(e[..., 0], e[..., 1])
    th = np.arctan2(rho, e[..., 2])
    ph = np.arctan2(e[..., 1], e[..., 0])
    return np.stack([th, ph], axis=-1)


def sphere_frame(x):
    """Embedded unit vector and the unit chart directions ``e_theta, e_phi``."""
    x = np.asarray(x, dtype=float)
    th, ph = x[..., 0], x[..., 1]
    ct, st, cp, sp = np.cos(th), np.sin(th), np.cos(ph), np.sin(ph)
    e = np.stack([st * cp, st * sp, ct], axis=-1)
    e_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_ph = np.stack([-sp, cp, np.zeros_like(ph)], axis=-1)
    return e, e_th, e_ph


def equatorial_frame(x, y):
    """Rotation(s) putting the great-circle arc from ``y`` to ``x`` on the equator.

    Returns ``Q`` with ``Q @ e`` the rotated embedding: the arc midpoint maps to
    ``(theta, phi) = (pi/2, 0)`` and the direction of travel to increasing phi.
    Works on batches: ``x, y`` of shape ``(..., 2)`` give ``Q`` of shape ``(..., 3, 3)``.
    """
    ex, ey = sphere_embed(x), sphere_embed(y)
    mid = ex + ey
    mid /= np.linalg.norm(mid, axis=-1, keepdims=True)
    u = ex - ey
    un = np.linalg.norm(u, axis=-1, keepdims=True)
    # degenerate x == y: any direction orthogonal to mid works
    fallback = np.cross(mid, np.array([0.0, 0.0, 1.0]))
    fb_norm = np.linalg.norm(fallback, axis=-1, keepdims=True)
    fallback = np.where(fb_norm > 1e-8, fallback, np.cross(mid, np.array([1.0, 0.0, 0.0])))
    fallback /= np.linalg.norm(fallback, axis=-1, keepdims=True)
    small = un < 1e-14
    u = np.where(small, fallback, u / np.where(small, 1.0, un))
    u = u - np.sum(u * mid, axis=-1, keepdims=True) * mid
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    w = np.cross(mid, u)
    return np.stack([mid, u, w], axis=-2)


def rotate_chart(Q, x):
    """Chart coordinates of point(s) ``x`` after applying rotation(s) ``Q``."""
    e = sphere_embed(x)
    return sphere_chart(np.einsum("...ij,...j->...i", Q, e))


@dataclass(frozen=True)
class RoundSphere(Manifold):
    radius: float = 1.0
    kind = "sphere"
    dim = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def check_chart(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2:
            raise ChartDomainError("sphere chart points are (theta, phi)")
        th = x[..., 0]
        if np.any(th < POLE_MARGIN) or np.any(th > np.pi - POLE_MARGIN):
            raise ChartDomainError(
                f"colatitude outside [{POLE_MARGIN}, pi - {POLE_MARGIN}]; rotate the chart first"
            )
        return x

    def metric_at(self, x) -> MetricData:
        th = self.check_chart(x)[0]
        r2 = self.radius**2
        s, c = np.sin(th), np.cos(th)
        gam = np.zeros((2, 2, 2))
        gam[0, 1, 1] = -s * c
        gam[1, 0, 1] = gam[1, 1, 0] = c / s
        return MetricData(
            g=np.diag([r2, r2 * s * s]),
            g_inv=np.diag([1.0 / r2, 1.0 / (r2 * s * s)]),
            sqrt_det_g=r2 * s,
            christoffel=gam,
            scalar_curvature=self.scalar_curvature(),
        )

    def scalar_curvature(self, x=None) -> float:
        return 2.0 / self.radius**2

    def angle(self, x, y):
        ex, ey = sphere_embed(x), sphere_embed(y)
        cr = np.linalg.norm(np.cross(ex, ey), axis=-1)
        return np.arctan2(cr, np.sum(ex * ey, axis=-1))

    def geodesic_distance(self, x, y):
        d = self.radius * self.angle(x, y)
        return float(d) if np.ndim(d) == 0 else d

    def log_map(self, y, x) -> np.ndarray:
        """Initial covector at ``y`` of the unit-time geodesic to ``x``.

        ``y`` must be admissible in the chart; ``x`` may be anywhere.
        """
        y = self.check_chart(y)
        psi = self.angle(x, y)
        self._check_log_distance(self.radius * psi)
        ey, e_th, e_ph = sphere_frame(y)
        ex = sphere_embed(x)
        tang = ex - np.sum(ex * ey, axis=-1, keepdims=True) * ey
        tn = np.linalg.norm(tang, axis=-1, keepdims=True)
        u = tang / np.where(tn > 0, tn, 1.0)
        r2 = self.radius**2
        eta_th = r2 * psi * np.sum(u * e_th, axis=-1)
        eta_ph = r2 * psi * np.sin(y[..., 0]) * np.sum(u * e_ph, axis=-1)
        return np.stack([eta_th, eta_ph], axis=-1)

    @property
    def injectivity_radius(self) -> float:
        return np.pi * self.radius

    @property
    def volume(self) -> float:
        return 4 * np.pi * self.radius**2

    def build_grid(self, resolution) -> QuadratureGrid:
        """Gauss-Legendre in ``cos(theta)`` times ``2 * resolution`` uniform longitudes."""
        n_th = int(np.atleast_1d(resolution)[0])
        if n_th < 4:
            raise ValueError("resolution must be at least 4")
        n_ph = 2 * n_th
        z, wz = np.polynomial.legendre.leggauss(n_th)
        th = np.arccos(z[::-1])
        wz = wz[::-1]
        ph = 2 * np.pi * np.arange(n_ph) / n_ph
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        nodes = np.stack([TH.ravel(), PH.ravel()], axis=-1)
        weights = (self.radius**2 * np.outer(wz, np.full(n_ph, 2 * np.pi / n_ph))).ravel()
        return QuadratureGrid(self, nodes, weights, (n_th,), shape=(n_th, n_ph))


def injectivity_radius(m: Manifold) -> float:
    return m.injectivity_radius


def curvature_oracle(m: Manifold, x, h: float = 1e-4) -> float:
    """Scalar curvature from finite differences of the Christoffel symbols.

    Test-only cross-check of the analytic value returned by ``metric_at``.
    """
    x = np.asarray(x, dtype=float)
    n = m.dim
    gam = m.metric_at(x).christoffel
    dgam = np.zeros((n, n, n, n))  # dgam[l, i, j, k] = d_l Gamma^i_{jk}
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        dgam[l] = (m.metric_at(x + e).christoffel - m.metric_at(x - e).christoffel) / (2 * h)
    # Ricci_{jk} = d_i G^i_{jk} - d_k G^i_{ji} + G^i_{ip} G^p_{jk} - G^i_{kp} G^p_{ji}
    ric = (
        np.einsum("iijk->jk", dgam)
        - np.einsum("kiji->jk", dgam)
        + np.einsum("iip,pjk->jk", gam, gam)
        - np.einsum("ikp,pji->jk", gam, gam)
    )
    return float(np.einsum("jk,jk->", m.metric_at(x).g_inv, ric))
