"""Independent reference computations used by the tests.

None of these touch the package's integrators or kernels: they use closed
forms, scipy's adaptive solvers and quadrature, or dense linear algebra.
"""
import numpy as np
from scipy.integrate import quad, solve_ivp


def flat_action(d, t):
    return d * d / (2 * t)


def jacobi_amplitude(d, curvature=1.0):
    """``sqrt(d / J(d))`` with ``J'' + K J = 0, J(0) = 0, J'(0) = 1``.

    For a surface of constant curvature ``K`` and no potential this is the
    amplitude ``t^{n/2} sqrt(D)``; in closed form ``sqrt(d / sin d)`` on the
    unit sphere.
    """
    if d == 0:
        return 1.0
    sol = solve_ivp(lambda s, z: [z[1], -curvature * z[0]], (0, d), [0.0, 1.0],
                    rtol=1e-12, atol=1e-14, method="DOP853")
    return float(np.sqrt(d / sol.y[0, -1]))


def bump(s):
    return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def cutoff(d, r_in, r_out):
    """Smooth step 1 on [0, r_in], 0 beyond r_out (same family as the package)."""
    s = (r_out - np.abs(d)) / (r_out - r_in)
    return bump(s) / (bump(s) + bump(1 - s))


def circle_multiplier(k, t, r_in, r_out, hbar=1.0):
    """Fourier multiplier of the V = 0 circle slice, by adaptive quadrature.

    ``(2 pi i hbar t)^{-1/2} int chi(r) exp(i r^2 / (2 hbar t) + i k r) dr``.
    """
    pref = (2j * np.pi * hbar * t) ** -0.5

    def part(f):
        return quad(f, -r_out, r_out, limit=4000, epsabs=1e-13, epsrel=1e-12)[0]

    re = part(lambda r: cutoff(r, r_in, r_out) * np.cos(r * r / (2 * hbar * t) + k * r))
    im = part(lambda r: cutoff(r, r_in, r_out) * np.sin(r * r / (2 * hbar * t) + k * r))
    return pref * (re + 1j * im)


def weighted_norm(K, w):
    """Dense SVD norm of ``K`` in ``L2(w)``."""
    s = np.sqrt(w)
    return float(np.linalg.svd(s[:, None] * K / s[None, :], compute_uv=False)[0])


def free_circle_exact(k, t, hbar=1.0):
    return np.exp(-0.5j * hbar * t * k * k)


def sphere_eigenvalue(l, curvature_term=True, hbar=1.0, radius=1.0):
    """Eigenvalue of -hbar^2 Lap / 2 (+ hbar^2 R / 12) for degree ``l``."""
    e = 0.5 * hbar**2 * l * (l + 1) / radius**2
    return e + (hbar**2 * 2 / radius**2 / 12 if curvature_term else 0.0)
