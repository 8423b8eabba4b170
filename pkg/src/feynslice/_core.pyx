# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched flow / shooting kernels.

Same contract as :mod:`feynslice._pycore`, one problem at a time in C.
Flat charts support n <= 3; the sphere chart is n = 2.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, M_PI, floor, isfinite

from ._tableau import A as _A, B as _B

cdef enum:
    MAXN = 3
    MAXNN = 6
    MAXS = 43
    NST = 12

cdef double TA[NST][NST]
cdef double TB[NST]

cdef int _i, _j
for _i in range(NST):
    TB[_i] = _B[_i]
    for _j in range(NST):
        TA[_i][_j] = _A[_i, _j]

cdef double ESCAPE_MARGIN = 0.2

cdef struct Params:
    int kind
    int n
    int m
    int d
    double radius
    double t2
    const double* amp
    const double* k
    const double* phase


cdef void trig_flat(Params* P, const double* x, double* v, double* grad, double* hess) noexcept nogil:
    cdef int n = P.n, a, i, j
    cdef double arg, c, s
    v[0] = 0.0
    for i in range(n):
        grad[i] = 0.0
        for j in range(n):
            hess[i * n + j] = 0.0
    for a in range(P.m):
        arg = P.phase[a]
        for i in range(n):
            arg += P.k[a * n + i] * x[i]
        c = P.amp[a] * cos(arg)
        s = P.amp[a] * sin(arg)
        v[0] += c
        for i in range(n):
            grad[i] -= s * P.k[a * n + i]
            for j in range(n):
                hess[i * n + j] -= c * P.k[a * n + i] * P.k[a * n + j]


cdef void trig_sphere(Params* P, double th, double ph, double* out) noexcept nogil:
    # out = v, vt, vp, vtt, vtp, vpp
    cdef double st = sin(th), ct = cos(th), sp = sin(ph), cp = cos(ph)
    cdef double k1, k2, k3, c0, c_t, c_p, c_tp, c_pp, cs, sn
    cdef int a, i
    for i in range(6):
        out[i] = 0.0
    for a in range(P.m):
        k1 = P.k[3 * a]
        k2 = P.k[3 * a + 1]
        k3 = P.k[3 * a + 2]
        c0 = k1 * st * cp + k2 * st * sp + k3 * ct
        c_t = k1 * ct * cp + k2 * ct * sp - k3 * st
        c_p = -k1 * st * sp + k2 * st * cp
        c_tp = -k1 * ct * sp + k2 * ct * cp
        c_pp = -k1 * st * cp - k2 * st * sp
        cs = P.amp[a] * cos(c0 + P.phase[a])
        sn = P.amp[a] * sin(c0 + P.phase[a])
        out[0] += cs
        out[1] -= sn * c_t
        out[2] -= sn * c_p
        out[3] -= cs * c_t * c_t - sn * c0
        out[4] -= cs * c_t * c_p + sn * c_tp
        out[5] -= cs * c_p * c_p + sn * c_pp


cdef void rhs(Params* P, const double* z, double* out) noexcept nogil:
    cdef int n = P.n, nn = 2 * P.n, i, j, l
    cdef double t2 = P.t2
    cdef double v
    cdef double grad[MAXN]
    cdef double hess[MAXN * MAXN]
    cdef double D[16]
    cdef double pot[6]
    cdef const double* M = z + nn
    cdef double* dM = out + nn
    cdef double acc, rho, th, pt, pp, s, c, s2, ke
    if P.kind == 0:
        trig_flat(P, z, &v, grad, hess)
        ke = 0.0
        for i in range(n):
            out[i] = z[n + i]
            out[n + i] = -t2 * grad[i]
            ke += z[n + i] * z[n + i]
        for i in range(n):
            for j in range(nn):
                dM[i * nn + j] = M[(n + i) * nn + j]
                acc = 0.0
                for l in range(n):
                    acc += hess[i * n + l] * M[l * nn + j]
                dM[(n + i) * nn + j] = -t2 * acc
        out[nn + nn * nn] = 0.5 * ke - t2 * v
        return
    rho = 1.0 / (P.radius * P.radius)
    th = z[0]
    pt = z[2]
    pp = z[3]
    s = sin(th)
    c = cos(th)
    s2 = s * s
    trig_sphere(P, th, z[1], pot)
    out[0] = rho * pt
    out[1] = rho * pp / s2
    out[2] = rho * pp * pp * c / (s2 * s) - t2 * pot[1]
    out[3] = -t2 * pot[2]
    for i in range(16):
        D[i] = 0.0
    D[0 * 4 + 2] = rho
    D[1 * 4 + 0] = -2.0 * rho * pp * c / (s2 * s)
    D[1 * 4 + 3] = rho / s2
    D[2 * 4 + 0] = rho * pp * pp * (-1.0 / s2 - 3.0 * c * c / (s2 * s2)) - t2 * pot[3]
    D[2 * 4 + 1] = -t2 * pot[4]
    D[2 * 4 + 3] = 2.0 * rho * pp * c / (s2 * s)
    D[3 * 4 + 0] = -t2 * pot[4]
    D[3 * 4 + 1] = -t2 * pot[5]
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for l in range(4):
                acc += D[i * 4 + l] * M[l * 4 + j]
            dM[i * 4 + j] = acc
    out[4 + 16] = 0.5 * rho * (pt * pt + pp * pp / s2) - t2 * pot[0]


cdef int flow_one(Params* P, const double* y, const double* eta, int steps, double* z) noexcept nogil:
    cdef int n = P.n, nn = 2 * P.n
    cdef int S = nn + nn * nn + 1
    cdef double ks[NST][MAXS]
    cdef double zi[MAXS]
    cdef double h = 1.0 / steps, acc
    cdef int st, i, j, q, status = 0
    for q in range(S):
        z[q] = 0.0
    for i in range(n):
        z[i] = y[i]
        z[n + i] = eta[i]
    for i in range(nn):
        z[nn + i * nn + i] = 1.0
    for st in range(steps):
        for i in range(NST):
            for q in range(S):
                acc = z[q]
                for j in range(i):
                    if TA[i][j] != 0.0:
                        acc += h * TA[i][j] * ks[j][q]
                zi[q] = acc
            rhs(P, zi, ks[i])
        for q in range(S):
            acc = 0.0
            for i in range(NST):
                acc += TB[i] * ks[i][q]
            z[q] += h * acc
        if P.kind == 1 and status == 0:
            if z[0] < ESCAPE_MARGIN or z[0] > M_PI - ESCAPE_MARGIN:
                status = 2
    if status == 0:
        for q in range(S):
            if not isfinite(z[q]):
                status = 3
                break
    return status


cdef int solve(int n, const double* A, int lda, int off, const double* b, double* out) noexcept nogil:
    """Solve the n x n block A[i*lda + off + j] x = b by pivoted elimination."""
    cdef double a[MAXN][MAXN + 1]
    cdef int i, j, r, p
    cdef double f, tmp, best
    for i in range(n):
        for j in range(n):
            a[i][j] = A[i * lda + off + j]
        a[i][n] = b[i]
    for i in range(n):
        p = i
        best = fabs(a[i][i])
        for r in range(i + 1, n):
            if fabs(a[r][i]) > best:
                best = fabs(a[r][i])
                p = r
        if best == 0.0:
            return 1
        if p != i:
            for j in range(n + 1):
                tmp = a[i][j]
                a[i][j] = a[p][j]
                a[p][j] = tmp
        for r in range(i + 1, n):
            f = a[r][i] / a[i][i]
            for j in range(i, n + 1):
                a[r][j] -= f * a[i][j]
    for i in range(n - 1, -1, -1):
        f = a[i][n]
        for j in range(i + 1, n):
            f -= a[i][j] * out[j]
        out[i] = f / a[i][i]
    return 0


cdef void _set_params(Params* P, int kind, int n, double radius, double t, const double* amp,
                      int m, const double* k, int d, const double* phase) noexcept nogil:
    P.kind = kind
    P.n = n
    P.m = m
    P.d = d
    P.radius = radius
    P.t2 = t * t
    P.amp = amp
    P.k = k
    P.phase = phase


def _check(kind, n):
    if kind == 0 and not (1 <= n <= MAXN):
        raise ValueError("compiled kernel supports flat dimension 1..3")
    if kind == 1 and n != 2:
        raise ValueError("sphere chart is two-dimensional")


def flow_batch(int kind, int n, double radius, double t, int steps, y, eta, amp, k, phase, record=False):
    if record:
        raise NotImplementedError("trajectory recording is provided by the numpy backend")
    _check(kind, n)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(amp, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(phase, dtype=np.float64)
    cdef int B = yv.shape[0], nn = 2 * n, S = nn + nn * nn + 1, b
    cdef int m = av.shape[0], d = kv.shape[2]
    zout = np.zeros((B, S))
    statout = np.zeros(B, dtype=np.int64)
    cdef double[:, ::1] zv = zout
    cdef long long[::1] sv = statout
    cdef Params P
    cdef const double* ap = &av[0] if m > 0 else NULL
    cdef const double* pp = &pv[0] if m > 0 else NULL
    with nogil:
        for b in range(B):
            _set_params(&P, kind, n, radius, t, ap, m, &kv[b, 0, 0] if m > 0 else NULL, d, pp)
            sv[b] = flow_one(&P, &yv[b, 0], &ev[b, 0], steps, &zv[b, 0])
    return zout, statout


def shoot_batch(int kind, int n, double radius, double t, int steps, y, x, eta0, amp, k, phase,
                double tol=1e-13, int maxiter=50):
    _check(kind, n)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(amp, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(phase, dtype=np.float64)
    cdef int B = yv.shape[0], nn = 2 * n, S = nn + nn * nn + 1
    cdef int m = av.shape[0], d = kv.shape[2]
    eta_out = np.array(eta0, dtype=np.float64, copy=True, order="C")
    x1_out = np.zeros((B, n))
    xi1_out = np.zeros((B, n))
    phi_out = np.zeros(B)
    M_out = np.zeros((B, nn, nn))
    iters_out = np.zeros(B, dtype=np.int64)
    resid_out = np.full(B, np.inf)
    status_out = np.full(B, 1, dtype=np.int64)
    cdef double[:, ::1] etav = eta_out
    cdef double[:, ::1] x1v = x1_out
    cdef double[:, ::1] xi1v = xi1_out
    cdef double[::1] phiv = phi_out
    cdef double[:, :, ::1] Mv = M_out
    cdef long long[::1] itv = iters_out
    cdef double[::1] rv = resid_out
    cdef long long[::1] sv = status_out
    cdef Params P
    cdef const double* ap = &av[0] if m > 0 else NULL
    cdef const double* pp = &pv[0] if m > 0 else NULL
    cdef double z[MAXS]
    cdef double zbest[MAXS]
    cdef double eta[MAXN]
    cdef double eta_prev[MAXN]
    cdef double step[MAXN]
    cdef double r[MAXN]
    cdef double rbest[MAXN]
    cdef double delta[MAXN]
    cdef double lam, best, rn, dot
    cdef int b, it, i, j, q, st, converged
    with nogil:
        for b in range(B):
            _set_params(&P, kind, n, radius, t, ap, m, &kv[b, 0, 0] if m > 0 else NULL, d, pp)
            for i in range(n):
                eta[i] = etav[b, i]
                eta_prev[i] = eta[i]
                step[i] = 0.0
            lam = 1.0
            best = 1e300
            converged = 0
            for q in range(S):
                zbest[q] = 0.0
            for it in range(maxiter):
                st = flow_one(&P, &yv[b, 0], eta, steps, z)
                itv[b] += 1
                if st != 0:
                    sv[b] = st
                    break
                rn = 0.0
                for i in range(n):
                    r[i] = z[i] - xv[b, i]
                if kind == 1:
                    r[1] = r[1] + M_PI
                    r[1] = r[1] - 2.0 * M_PI * floor(r[1] / (2.0 * M_PI)) - M_PI
                for i in range(n):
                    rn += r[i] * r[i]
                rn = sqrt(rn)
                if rn < tol:
                    for q in range(S):
                        zbest[q] = z[q]
                    for i in range(n):
                        rbest[i] = r[i]
                    best = rn
                    converged = 1
                    break
                if rn >= best:
                    lam *= 0.5
                    if lam < 9.313225746154785e-10:
                        break
                    for i in range(n):
                        eta[i] = eta_prev[i] - lam * step[i]
                    continue
                best = rn
                for q in range(S):
                    zbest[q] = z[q]
                for i in range(n):
                    rbest[i] = r[i]
                    eta_prev[i] = eta[i]
                if solve(n, z + nn, nn, n, r, step) != 0:
                    break
                lam = 1.0
                for i in range(n):
                    eta[i] -= step[i]
            rv[b] = best
            for i in range(nn):
                for j in range(nn):
                    Mv[b, i, j] = zbest[nn + i * nn + j]
            for i in range(n):
                x1v[b, i] = zbest[i]
            if converged:
                sv[b] = 0
                solve(n, zbest + nn, nn, n, rbest, delta)
                dot = 0.0
                for i in range(n):
                    etav[b, i] = eta[i] - delta[i]
                    dot += zbest[n + i] * rbest[i]
                for i in range(n):
                    xi1v[b, i] = zbest[n + i]
                    for j in range(n):
                        xi1v[b, i] -= zbest[nn + (n + i) * nn + n + j] * delta[j]
                phiv[b] = zbest[S - 1] - dot
            else:
                for i in range(n):
                    etav[b, i] = eta_prev[i]
                    xi1v[b, i] = zbest[n + i]
                phiv[b] = zbest[S - 1]
    return {
        "eta": eta_out,
        "x1": x1_out,
        "xi1": xi1_out,
        "phi": phi_out,
        "jac_x_y": M_out[:, :n, :n].copy(),
        "jac_x_eta": M_out[:, :n, n:].copy(),
        "jac_xi_y": M_out[:, n:, :n].copy(),
        "jac_xi_eta": M_out[:, n:, n:].copy(),
        "iters": iters_out,
        "residual": resid_out,
        "status": status_out,
    }
