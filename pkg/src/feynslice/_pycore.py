"""Pure numpy implementation of the batched flow / shooting kernels.

Every routine works on a batch of ``B`` independent problems at once.  The
augmented state of one problem is laid out as::

    [x (n), xi (n), M (2n x 2n, row-major), phi (1)]

where ``M`` is the variational matrix d(x, xi)(s) / d(y, eta) and ``phi`` the
accumulated scaled action.  ``kind`` is 0 for flat periodic charts and 1 for
the sphere chart ``(theta, phi)`` of radius ``radius``.

The compiled module ``_core`` exposes the same functions with the same
signatures; results agree to rounding.
"""
from __future__ import annotations

import numpy as np

from ._tableau import A as _A, B as _B, STAGES as _STAGES

FLAT, SPHERE = 0, 1
OK, NOT_CONVERGED, CHART_ESCAPE, NONFINITE = 0, 1, 2, 3
ESCAPE_MARGIN = 0.2


def _trig_flat(x, amp, k, phase):
    """V, grad V, hess V for ``sum A cos(k.x + phase)``; ``k`` is ``(B, m, n)``."""
    B, n = x.shape
    if amp.size == 0:
        return np.zeros(B), np.zeros((B, n)), np.zeros((B, n, n))
    arg = np.einsum("bmn,bn->bm", k, x) + phase
    c, s = np.cos(arg) * amp, np.sin(arg) * amp
    v = c.sum(axis=1)
    grad = -np.einsum("bm,bmn->bn", s, k)
    hess = -np.einsum("bm,bmi,bmj->bij", c, k, k)
    return v, grad, hess


def _trig_sphere(th, ph, amp, k, phase):
    """Potential derivatives in the (theta, phi) chart; ``k`` is ``(B, m, 3)``."""
    B = th.shape[0]
    if amp.size == 0:
        z = np.zeros(B)
        return z, z, z, z, z, z
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    k1, k2, k3 = k[..., 0], k[..., 1], k[..., 2]
    st_, ct_, sp_, cp_ = st[:, None], ct[:, None], sp[:, None], cp[:, None]
    c0 = k1 * st_ * cp_ + k2 * st_ * sp_ + k3 * ct_
    c_t = k1 * ct_ * cp_ + k2 * ct_ * sp_ - k3 * st_
    c_p = -k1 * st_ * sp_ + k2 * st_ * cp_
    c_tt = -c0
    c_tp = -k1 * ct_ * sp_ + k2 * ct_ * cp_
    c_pp = -k1 * st_ * cp_ - k2 * st_ * sp_
    arg = c0 + phase
    cs, sn = np.cos(arg) * amp, np.sin(arg) * amp
    v = cs.sum(1)
    vt = -(sn * c_t).sum(1)
    vp = -(sn * c_p).sum(1)
    vtt = -(cs * c_t * c_t + sn * c_tt).sum(1)
    vtp = -(cs * c_t * c_p + sn * c_tp).sum(1)
    vpp = -(cs * c_p * c_p + sn * c_pp).sum(1)
    return v, vt, vp, vtt, vtp, vpp


def _rhs(kind, n, radius, t2, z, amp, k, phase):
    B = z.shape[0]
    nn = 2 * n
    out = np.empty_like(z)
    M = z[:, nn : nn + nn * nn].reshape(B, nn, nn)
    dM = out[:, nn : nn + nn * nn].reshape(B, nn, nn)
    if kind == FLAT:
        x, xi = z[:, :n], z[:, n:nn]
        v, grad, hess = _trig_flat(x, amp, k, phase)
        out[:, :n] = xi
        out[:, n:nn] = -t2 * grad
        dM[:, :n, :] = M[:, n:, :]
        dM[:, n:, :] = -t2 * np.einsum("bij,bjk->bik", hess, M[:, :n, :])
        out[:, -1] = 0.5 * np.sum(xi * xi, axis=1) - t2 * v
        return out
    rho = 1.0 / radius**2
    th, ph, pt, pp = z[:, 0], z[:, 1], z[:, 2], z[:, 3]
    s, c = np.sin(th), np.cos(th)
    s2 = s * s
    v, vt, vp, vtt, vtp, vpp = _trig_sphere(th, ph, amp, k, phase)
    out[:, 0] = rho * pt
    out[:, 1] = rho * pp / s2
    out[:, 2] = rho * pp * pp * c / (s2 * s) - t2 * vt
    out[:, 3] = -t2 * vp
    D = np.zeros((B, 4, 4))
    D[:, 0, 2] = rho
    D[:, 1, 0] = -2 * rho * pp * c / (s2 * s)
    D[:, 1, 3] = rho / s2
    D[:, 2, 0] = rho * pp * pp * (-1.0 / s2 - 3 * c * c / (s2 * s2)) - t2 * vtt
    D[:, 2, 1] = -t2 * vtp
    D[:, 2, 3] = 2 * rho * pp * c / (s2 * s)
    D[:, 3, 0] = -t2 * vtp
    D[:, 3, 1] = -t2 * vpp
    dM[:] = np.einsum("bij,bjk->bik", D, M)
    out[:, -1] = 0.5 * rho * (pt * pt + pp * pp / s2) - t2 * v
    return out


def _initial_state(n, y, eta):
    B = y.shape[0]
    nn = 2 * n
    z = np.zeros((B, nn + nn * nn + 1))
    z[:, :n] = y
    z[:, n:nn] = eta
    z[:, nn : nn + nn * nn] = np.eye(nn).ravel()
    return z


def flow_batch(kind, n, radius, t, steps, y, eta, amp, k, phase, record=False):
    """Integrate the scaled flow over unit time for a batch of initial data.

    Returns ``(z_final, status)``; with ``record=True`` also the list of states
    after every step (index 0 is the initial state).
    """
    y = np.ascontiguousarray(y, dtype=float)
    eta = np.ascontiguousarray(eta, dtype=float)
    z = _initial_state(n, y, eta)
    h = 1.0 / steps
    t2 = t * t
    status = np.zeros(len(z), dtype=np.int64)
    traj = [z.copy()] if record else None
    ks = np.empty((_STAGES,) + z.shape)
    for _ in range(steps):
        for i in range(_STAGES):
            zi = z.copy()
            for j in range(i):
                if _A[i, j] != 0.0:
                    zi += (h * _A[i, j]) * ks[j]
            ks[i] = _rhs(kind, n, radius, t2, zi, amp, k, phase)
        z = z + h * np.tensordot(_B, ks, axes=(0, 0))
        if kind == SPHERE:
            th = z[:, 0]
            bad = (th < ESCAPE_MARGIN) | (th > np.pi - ESCAPE_MARGIN)
            status[bad & (status == OK)] = CHART_ESCAPE
        if record:
            traj.append(z.copy())
    status[~np.all(np.isfinite(z), axis=1) & (status == OK)] = NONFINITE
    return (z, status, traj) if record else (z, status)


def _split(z, n):
    nn = 2 * n
    B = z.shape[0]
    M = z[:, nn : nn + nn * nn].reshape(B, nn, nn)
    return z[:, :n], z[:, n:nn], M, z[:, -1]


def _residual(kind, x1, x):
    r = x1 - x
    if kind == SPHERE:
        r[:, 1] = (r[:, 1] + np.pi) % (2 * np.pi) - np.pi
    return r


def shoot_batch(kind, n, radius, t, steps, y, x, eta0, amp, k, phase, tol=1e-13, maxiter=50):
    """Newton shooting ``x(1; y, eta) = x`` for a batch.

    Undamped Newton with step halving whenever the residual grows.  Returns a
    dict of arrays; ``eta``, ``xi1`` and ``phi`` carry a first-order correction
    from the final residual.
    """
    y = np.ascontiguousarray(y, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    B = y.shape[0]
    nn = 2 * n
    eta = np.array(eta0, dtype=float, copy=True)
    eta_prev = eta.copy()
    step = np.zeros_like(eta)
    lam = np.ones(B)
    best = np.full(B, np.inf)
    iters = np.zeros(B, dtype=np.int64)
    status = np.full(B, NOT_CONVERGED, dtype=np.int64)
    zfin = np.zeros((B, nn + nn * nn + 1))
    resid = np.full(B, np.inf)
    rfin = np.zeros((B, n))
    active = np.arange(B)
    for _ in range(maxiter):
        if active.size == 0:
            break
        z, st = flow_batch(kind, n, radius, t, steps, y[active], eta[active], amp, k[active], phase)
        iters[active] += 1
        x1, _, M, _ = _split(z, n)
        r = _residual(kind, x1, x[active])
        rn = np.sqrt(np.sum(r * r, axis=1))
        failed = st != OK
        if np.any(failed):
            idx = active[failed]
            status[idx] = st[failed]
        done = (~failed) & (rn < tol)
        idx = active[done]
        status[idx] = OK
        zfin[idx] = z[done]
        resid[idx] = rn[done]
        rfin[idx] = r[done]
        cont = ~(failed | done)
        ia = active[cont]
        rn_c = rn[cont]
        worse = rn_c >= best[ia]
        # line search: halve the previous step from the last accepted iterate
        iw = ia[worse]
        lam[iw] *= 0.5
        eta[iw] = eta_prev[iw] - lam[iw, None] * step[iw]
        ib = ia[~worse]
        if ib.size:
            Ab = M[cont][~worse][:, :n, n:]
            delta = np.linalg.solve(Ab, r[cont][~worse][..., None])[..., 0]
            best[ib] = rn_c[~worse]
            eta_prev[ib] = eta[ib]
            step[ib] = delta
            lam[ib] = 1.0
            eta[ib] = eta[ib] - delta
            zfin[ib] = z[cont][~worse]
            resid[ib] = rn_c[~worse]
            rfin[ib] = r[cont][~worse]
        stuck = lam[ia] < 2.0**-30
        status[ia[stuck]] = NOT_CONVERGED
        active = ia[~stuck]
    x1, xi1, M, phi = _split(zfin, n)
    Aeta = M[:, :n, n:]
    Peta = M[:, n:, n:]
    ok = status == OK
    delta = np.zeros((B, n))
    if np.any(ok):
        delta[ok] = np.linalg.solve(Aeta[ok], rfin[ok][..., None])[..., 0]
    eta_out = np.where(ok[:, None], eta - delta, eta_prev)
    return {
        "eta": eta_out,
        "x1": x1.copy(),
        "xi1": xi1 - np.einsum("bij,bj->bi", Peta, delta),
        "phi": phi - np.sum(xi1 * rfin, axis=1),
        "jac_x_y": M[:, :n, :n].copy(),
        "jac_x_eta": Aeta.copy(),
        "jac_xi_y": M[:, n:, :n].copy(),
        "jac_xi_eta": Peta.copy(),
        "iters": iters,
        "residual": resid,
        "status": status,
    }
