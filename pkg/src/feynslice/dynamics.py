"""Scaled Hamiltonian flow and lowest-energy shooting.

For a slice of physical duration ``t`` the path is computed in scaled form:
the Hamiltonian ``H_t(x, xi) = |xi|_g^2 / 2 + t^2 V(x)`` is integrated over
unit time, starting from ``(y, eta)``.  The physical momentum is ``eta / t``.
Variational equations for ``d(x, xi)(1) / d(y, eta)`` and the scaled action
``Phi`` are integrated alongside with the same fixed-step DOP853 scheme.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import _backend, _pycore
from .errors import (
    ChartDomainError,
    ChartEscapeError,
    MomentumBoundError,
    NoUniqueGeodesicError,
    ShootingError,
)
from .manifold import Manifold, equatorial_frame, rotate_chart
from .potential import Potential

DEFAULT_STEPS = 16
MOMENTUM_BOUND_FRACTION = 0.95
SHOOT_TOL = 1e-13
MAX_NEWTON = 50

# status codes beyond the kernel's
MOMENTUM_BOUND = 4

STATUS_TEXT = {
    _pycore.OK: "ok",
    _pycore.NOT_CONVERGED: "Newton shooting did not converge",
    _pycore.CHART_ESCAPE: "trajectory left the admissible chart",
    _pycore.NONFINITE: "non-finite values in the flow",
    MOMENTUM_BOUND: "initial momentum violates the bound mu",
}


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if x.shape != xi.shape:
            raise ValueError("position and momentum dimensions differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True)
class ScaledFlowResult:
    endpoint: PhasePoint
    jac_x_eta: np.ndarray
    jac_xi_eta: np.ndarray
    jac_x_y: np.ndarray
    jac_xi_y: np.ndarray
    action_phi: float
    trajectory: Tuple[PhasePoint, ...] = ()

    @property
    def variational_matrix(self) -> np.ndarray:
        return np.block([[self.jac_x_y, self.jac_x_eta], [self.jac_xi_y, self.jac_xi_eta]])


@dataclass(frozen=True)
class LowestEnergyPath:
    """Lowest-energy path from ``y`` to ``x`` in scaled form.

    ``x_chart``, ``y_chart``, ``eta0`` and the flow data are expressed in the
    evaluation chart: the covering chart for flat manifolds and, on the
    sphere, the chart rotated by ``rotation`` so the path runs along the equator.
    """

    t: float
    x: np.ndarray
    y: np.ndarray
    eta0: np.ndarray
    flow: ScaledFlowResult
    newton_iters: int
    residual: float
    x_chart: np.ndarray = field(repr=False, default=None)
    y_chart: np.ndarray = field(repr=False, default=None)
    rotation: Optional[np.ndarray] = field(repr=False, default=None)


def kernel_kind(m: Manifold) -> int:
    return _pycore.SPHERE if m.kind == "sphere" else _pycore.FLAT


def _radius(m: Manifold) -> float:
    return float(getattr(m, "radius", 1.0))


def hamiltonian(m: Manifold, V: Potential, t: float, x, xi, rotation=None) -> np.ndarray:
    """Scaled energy ``|xi|_g^2 / 2 + t^2 V(x)`` at chart points (batched)."""
    x = np.atleast_2d(x)
    xi = np.atleast_2d(xi)
    if m.kind == "sphere":
        s2 = np.sin(x[:, 0]) ** 2
        ke = 0.5 * (xi[:, 0] ** 2 + xi[:, 1] ** 2 / s2) / m.radius**2
        xo = x if rotation is None else rotate_chart(np.swapaxes(rotation, -1, -2), x)
        return ke + t * t * V(m, xo)
    return 0.5 * np.sum(xi * xi, axis=1) + t * t * V(m, x)


def momentum_norm(m: Manifold, y, eta) -> np.ndarray:
    """``|eta|_g`` at chart point(s) ``y`` (batched, last axis is the chart)."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if m.kind == "sphere":
        s = np.sin(y[..., 0])
        return np.sqrt(eta[..., 0] ** 2 + (eta[..., 1] / s) ** 2) / m.radius
    return np.sqrt(np.sum(eta * eta, axis=-1))


def potential_arrays(m: Manifold, V: Potential, batch: int, rotation=None):
    """Per-problem potential data for the kernels; wavevectors follow the rotation."""
    amp, k, phase = V.arrays(m)
    if rotation is not None and k.size:
        kb = np.einsum("bij,mj->bmi", rotation, k)
    else:
        kb = np.broadcast_to(k, (batch,) + k.shape).copy()
    return amp, np.ascontiguousarray(kb), phase


def prepare_pairs(m: Manifold, xs, ys):
    """Evaluation-chart coordinates for pairs ``(x_b, y_b)``.

    Returns ``(x_chart, y_chart, rotation)`` where ``rotation`` is ``None``
    for flat manifolds and a ``(B, 3, 3)`` array on the sphere.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if m.kind == "sphere":
        Q = equatorial_frame(xs, ys)
        return rotate_chart(Q, xs), rotate_chart(Q, ys), Q
    return m.unwrap(ys, xs), ys.copy(), None


def initial_guess(m: Manifold, x_chart, y_chart) -> np.ndarray:
    """Log-map guess in the evaluation chart."""
    if m.kind == "sphere":
        return m.log_map(y_chart, x_chart)
    return np.asarray(x_chart, dtype=float) - np.asarray(y_chart, dtype=float)


def shoot_charted(
    m: Manifold,
    V: Potential,
    t: float,
    x_chart,
    y_chart,
    rotation=None,
    mu: Optional[float] = None,
    steps: int = DEFAULT_STEPS,
    backend: Optional[str] = None,
    eta0=None,
    chunk: int = 20000,
):
    """Batched shooting in prepared evaluation charts; returns the kernel dict.

    ``status`` is 0 on success, otherwise one of the codes in ``STATUS_TEXT``.
    """
    x_chart = np.atleast_2d(np.asarray(x_chart, dtype=float))
    y_chart = np.atleast_2d(np.asarray(y_chart, dtype=float))
    B = len(x_chart)
    mu = default_mu(m) if mu is None else mu
    if eta0 is None:
        eta0 = initial_guess(m, x_chart, y_chart)
    eta0 = np.atleast_2d(eta0)
    kern = _backend.get(backend)
    n = m.dim
    parts = []
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        rot = None if rotation is None else rotation[lo:hi]
        amp, k, phase = potential_arrays(m, V, hi - lo, rot)
        parts.append(
            kern.shoot_batch(
                kernel_kind(m), n, _radius(m), float(t), int(steps),
                y_chart[lo:hi], x_chart[lo:hi], eta0[lo:hi], amp, k, phase,
                SHOOT_TOL, MAX_NEWTON,
            )
        )
    out = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]} if parts else {}
    if B:
        bad_mu = (out["status"] == 0) & (momentum_norm(m, y_chart, out["eta"]) >= mu)
        out["status"] = np.where(bad_mu, MOMENTUM_BOUND, out["status"])
    return out


def default_mu(m: Manifold) -> float:
    return MOMENTUM_BOUND_FRACTION * m.injectivity_radius


def raise_for_status(code: int, where: str = ""):
    if code == 0:
        return
    msg = STATUS_TEXT.get(int(code), f"status {code}") + (f" ({where})" if where else "")
    if code == MOMENTUM_BOUND:
        raise MomentumBoundError(msg)
    if code == _pycore.CHART_ESCAPE:
        raise ChartEscapeError(msg)
    raise ShootingError(msg)


def _flow_from_kernel(out, i: int, n: int, trajectory=()) -> ScaledFlowResult:
    return ScaledFlowResult(
        endpoint=PhasePoint(out["x1"][i], out["xi1"][i]),
        jac_x_eta=out["jac_x_eta"][i],
        jac_xi_eta=out["jac_xi_eta"][i],
        jac_x_y=out["jac_x_y"][i],
        jac_xi_y=out["jac_xi_y"][i],
        action_phi=float(out["phi"][i]),
        trajectory=trajectory,
    )


def scaled_hamiltonian_flow(
    m: Manifold,
    V: Potential,
    t: float,
    start: PhasePoint,
    steps: int = DEFAULT_STEPS,
    slice_bound: Optional[float] = None,
    rotation=None,
) -> ScaledFlowResult:
    """Flow of ``H_t`` over unit scaled time with variational matrix and action.

    On the sphere ``start`` is given in the chart obtained by ``rotation``
    (identity when ``None``) and must be admissible there.
    """
    if steps < 8:
        raise ValueError("steps must be at least 8")
    if slice_bound is not None and abs(t) >= slice_bound:
        raise ValueError(f"|t| = {abs(t)} exceeds the slice bound {slice_bound}")
    n = m.dim
    x0 = m.check_chart(start.x)
    if x0.shape != (n,):
        raise ChartDomainError(f"expected a point of dimension {n}")
    rot = None if rotation is None else np.asarray(rotation)[None]
    amp, k, phase = potential_arrays(m, V, 1, rot)
    z, status, traj = _pycore.flow_batch(
        kernel_kind(m), n, _radius(m), float(t), int(steps),
        x0[None], np.atleast_1d(start.xi)[None], amp, k, phase, record=True,
    )
    raise_for_status(int(status[0]), "scaled_hamiltonian_flow")
    nn = 2 * n
    M = z[0, nn : nn + nn * nn].reshape(nn, nn)
    xend = z[0, :n].copy()
    if m.kind != "sphere":
        xend = np.mod(xend, np.asarray(m.periods))
    path = tuple(PhasePoint(s[0, :n], s[0, n:nn]) for s in traj)
    return ScaledFlowResult(
        endpoint=PhasePoint(xend, z[0, n:nn]),
        jac_x_eta=M[:n, n:],
        jac_xi_eta=M[n:, n:],
        jac_x_y=M[:n, :n],
        jac_xi_y=M[n:, :n],
        action_phi=float(z[0, -1]),
        trajectory=path,
    )


def shoot_lowest_energy(
    m: Manifold,
    V: Potential,
    t: float,
    x,
    y,
    mu: Optional[float] = None,
    steps: int = DEFAULT_STEPS,
    slice_bound: Optional[float] = None,
    backend: Optional[str] = None,
) -> LowestEnergyPath:
    """Newton shooting for the unique path with small initial momentum.

    The initial guess is the log map ``y -> x``; the solution satisfies
    ``|eta0|_g < mu``.  Raises ``ShootingError`` (or a subclass) on failure.
    """
    if slice_bound is not None and not 0 < abs(t) < slice_bound:
        raise ValueError(f"|t| = {abs(t)} outside (0, {slice_bound})")
    if t == 0:
        raise ValueError("t must be nonzero")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = m.geodesic_distance(x, y)
    if d >= m.injectivity_radius:
        raise NoUniqueGeodesicError(f"d(x, y) = {d:.6g} is not below the injectivity radius")
    xc, yc, Q = prepare_pairs(m, x[None], y[None])
    out = shoot_charted(m, V, t, xc, yc, Q, mu=mu, steps=steps, backend=backend)
    raise_for_status(int(out["status"][0]), f"t={t}, x={x}, y={y}")
    return LowestEnergyPath(
        t=float(t),
        x=x,
        y=y,
        eta0=out["eta"][0],
        flow=_flow_from_kernel(out, 0, m.dim),
        newton_iters=int(out["iters"][0]),
        residual=float(out["residual"][0]),
        x_chart=xc[0],
        y_chart=yc[0],
        rotation=None if Q is None else Q[0],
    )
