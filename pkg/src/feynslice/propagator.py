"""Discretized short-time propagators on quadrature grids.

A slice operator represents the kernel

    K[i, j] = (2 pi hbar t)^{-n/2} e^{-i pi n / 4} chi(d_ij) a(t, x_i, y_j) e^{i S / hbar} w_j

so that applying it is a matrix-vector product.  Pairs outside the cutoff
are never shot and stay exact zeros.  With no potential the kernel is
invariant under grid translations (flat tori) or longitude rotations (the
sphere) and is stored in that reduced form.
"""
from __future__ import annotations

import struct
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import sph_harm_y

from .action import COND_LIMIT, CutoffSpec, amplitudes_from_shoot, cutoff_value
from .dynamics import DEFAULT_STEPS, STATUS_TEXT, default_mu, prepare_pairs, shoot_charted
from .errors import AssemblyError
from .manifold import Manifold, QuadratureGrid
from .potential import Potential

DUMP_MAGIC = b"FSLC"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")
PAIR_CHUNK = 20000


class PhaseSamplingWarning(UserWarning):
    pass


class DenseKernel:
    """Plain ``N x N`` kernel matrix."""

    structure = "dense"

    def __init__(self, K: np.ndarray, weights: np.ndarray):
        self.K = K
        self._w = weights

    @property
    def nbytes(self) -> int:
        return self.K.nbytes

    def matvec(self, u):
        return self.K @ u

    def rmatvec(self, u):
        w = self._w.reshape((-1,) + (1,) * (np.ndim(u) - 1))
        return (self.K.conj().T @ (w * u)) / w

    def rows(self, lo, hi):
        return self.K[lo:hi]


class CirculantKernel:
    """Translation-invariant kernel on a uniform periodic grid.

    ``K[i, j] = R[j - i]`` (multi-index differences modulo the grid shape),
    applied with FFTs.  Weights are uniform, so the adjoint is the plain one.
    """

    structure = "circulant"

    def __init__(self, R: np.ndarray):
        self.shape = R.shape
        self._axes = tuple(range(R.ndim))
        self.rhat = np.fft.ifftn(R) * R.size

    @property
    def nbytes(self) -> int:
        return self.rhat.nbytes

    def _apply(self, u, mult):
        extra = np.shape(u)[1:]
        U = np.fft.fftn(np.reshape(u, self.shape + extra), axes=self._axes)
        mult = mult.reshape(self.shape + (1,) * len(extra))
        return np.fft.ifftn(mult * U, axes=self._axes).reshape((-1,) + extra)

    def matvec(self, u):
        return self._apply(u, self.rhat)

    def rmatvec(self, u):
        return self._apply(u, self.rhat.conj())

    def rows(self, lo, hi):
        R = np.fft.fftn(self.rhat) / self.rhat.size
        idx = np.indices(self.shape).reshape(len(self.shape), -1)
        flat = np.zeros((hi - lo, idx.shape[1]), dtype=np.int64)
        for ax, n_ax in enumerate(self.shape):
            flat = flat * n_ax + (idx[ax][None, :] - idx[ax][lo:hi, None]) % n_ax
        return R.ravel()[flat]


class BlockCirculantKernel:
    """Kernel invariant under the longitude shifts of a sphere grid.

    ``K[(a, p), (b, q)] = R[a, b, q - p]``; each longitude frequency is an
    independent ``n_theta x n_theta`` block.
    """

    structure = "block-circulant"

    def __init__(self, R: np.ndarray, weights: np.ndarray):
        self.n_th, _, self.n_ph = R.shape
        # rhat[k] = sum_s R[:, :, s] exp(2 pi i k s / n)
        self.rhat = np.ascontiguousarray(np.moveaxis(np.fft.ifft(R, axis=2) * self.n_ph, 2, 0))
        self._w = weights[:: self.n_ph]

    @property
    def nbytes(self) -> int:
        return self.rhat.nbytes

    def _apply(self, u, blocks):
        extra = np.shape(u)[1:]
        U = np.fft.fft(np.reshape(u, (self.n_th, self.n_ph, -1)), axis=1)
        out = blocks @ U.transpose(1, 0, 2)
        return np.fft.ifft(out.transpose(1, 0, 2), axis=1).reshape((-1,) + extra)

    def matvec(self, u):
        return self._apply(u, self.rhat)

    def rmatvec(self, u):
        extra = np.shape(u)[1:]
        w = np.repeat(self._w, self.n_ph).reshape((-1,) + (1,) * len(extra))
        return self._apply(w * u, self.rhat.conj().transpose(0, 2, 1)) / w

    def rows(self, lo, hi):
        R = np.moveaxis(np.fft.fft(self.rhat, axis=0) / self.n_ph, 0, 2)
        i = np.arange(lo, hi)
        a, p = i // self.n_ph, i % self.n_ph
        q = np.arange(self.n_ph)
        s = (q[None, :] - p[:, None]) % self.n_ph  # (rows, q)
        out = R[a[:, None, None], np.arange(self.n_th)[None, :, None], s[:, None, :]]
        return out.reshape(hi - lo, -1)


DENSE_LIMIT = 20000


class SliceOperator:
    """Discretized short-time slice ``E_hbar(t)`` on a quadrature grid.

    ``kernel`` materializes the dense matrix; structured kernels (translation
    or rotation invariant problems) are applied with FFTs and only expanded
    on request.
    """

    def __init__(self, t, hbar, grid, prefactor_branch, action, cutoff=None, warnings=(), pairs_shot=0):
        self.t = float(t)
        self.hbar = float(hbar)
        self.grid = grid
        self.prefactor_branch = prefactor_branch
        self.action = action
        self.cutoff = cutoff
        self.warnings = tuple(warnings)
        self.pairs_shot = pairs_shot
        self._dense = action.K if isinstance(action, DenseKernel) else None

    @property
    def structure(self) -> str:
        return self.action.structure

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def nbytes(self) -> int:
        return self.action.nbytes

    @property
    def kernel(self) -> np.ndarray:
        if self._dense is None:
            if self.size > DENSE_LIMIT:
                raise MemoryError(f"dense kernel of {self.size} nodes is too large; use matvec")
            self._dense = self.action.rows(0, self.size)
        return self._dense

    def matvec(self, u):
        return self.action.matvec(u)

    def rmatvec(self, u):
        """Adjoint for the weighted inner product."""
        return self.action.rmatvec(u)

    def iter_rows(self, chunk: int = 256):
        for lo in range(0, self.size, chunk):
            yield self.action.rows(lo, min(self.size, lo + chunk))


@dataclass(frozen=True)
class Partition:
    slices: Tuple[float, ...]

    def __post_init__(self):
        sl = tuple(float(s) for s in self.slices)
        if not sl:
            raise ValueError("a partition needs at least one slice")
        if min(sl) <= 0:
            raise ValueError("partition slices must be positive")
        object.__setattr__(self, "slices", sl)

    @classmethod
    def uniform(cls, total: float, L: int) -> "Partition":
        if L < 1:
            raise ValueError("L must be a positive integer")
        return cls((total / L,) * L)

    @property
    def total(self) -> float:
        return float(sum(self.slices))

    @property
    def mesh(self) -> float:
        return max(self.slices)

    def __len__(self):
        return len(self.slices)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    values: np.ndarray
    grid: QuadratureGrid
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape[0] != self.grid.size:
            raise ValueError(f"{v.shape[0]} values for a grid of {self.grid.size} nodes")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return self.grid.norm(self.values)


def prefactor(n: int, t: float, hbar: float) -> complex:
    """Principal branch ``(2 pi i hbar t)^{-n/2} = (2 pi hbar t)^{-n/2} e^{-i pi n/4}``."""
    return (2 * np.pi * hbar * t) ** (-0.5 * n) * np.exp(-0.25j * np.pi * n)


def grid_spacing(grid: QuadratureGrid) -> float:
    """Largest distance between neighboring nodes along a coordinate line."""
    m = grid.manifold
    if m.kind == "sphere":
        th = np.unique(grid.nodes[:, 0])
        gaps = np.diff(np.concatenate([[0.0], th, [np.pi]]))
        return float(m.radius * max(gaps[1:-1].max(initial=0.0), 2 * np.pi / grid.shape[1]))
    return float(max(p / r for p, r in zip(m.periods, grid.resolution)))


def phase_sampling_ok(grid: QuadratureGrid, t: float, hbar: float, r_out: float) -> bool:
    return grid_spacing(grid) <= np.pi * hbar * t / r_out


def _pair_entries(m, V, t, hbar, cutoff, X, Y, steps, mu, backend):
    """Kernel values without the quadrature weight; also the failing pair index."""
    xc, yc, Q = prepare_pairs(m, X, Y)
    out = shoot_charted(m, V, t, xc, yc, Q, mu=mu, steps=steps, backend=backend)
    phi, S, a, D, detA, cond = amplitudes_from_shoot(m, t, xc, yc, out)
    bad = np.flatnonzero((out["status"] != 0) | ~(detA > 0) | ~(cond < COND_LIMIT))
    d = np.atleast_1d(m.geodesic_distance(X, Y))
    chi = cutoff_value(cutoff, d)
    vals = chi * a * np.exp(1j * S / hbar)
    reason = None
    if bad.size:
        b = bad[0]
        code = int(out["status"][b])
        reason = (b, STATUS_TEXT.get(code, f"status {code}") if code else "conjugate point")
    return vals, reason


def _within(m: Manifold, xi, nodes, r_out):
    d = np.atleast_1d(m.geodesic_distance(np.broadcast_to(xi, nodes.shape), nodes))
    return np.flatnonzero(d < r_out)


def _translation_row(m, V, grid, t, hbar, cutoff, steps, mu, backend, row_nodes):
    """Rows of the weightless kernel for the given representative nodes."""
    nodes = grid.nodes
    N = len(nodes)
    R = np.zeros((len(row_nodes), N), dtype=complex)
    count = 0
    for r, i in enumerate(row_nodes):
        js = _within(m, nodes[i], nodes, cutoff.r_out)
        X = np.broadcast_to(nodes[i], (len(js), nodes.shape[1]))
        vals, reason = _pair_entries(m, V, t, hbar, cutoff, X, nodes[js], steps, mu, backend)
        if reason is not None:
            raise AssemblyError(f"pair (i={i}, j={js[reason[0]]}): {reason[1]}")
        R[r, js] = vals
        count += len(js)
    return R, count


def _assemble_circulant(m, V, grid, t, hbar, cutoff, steps, mu, backend):
    """V = 0 on a flat torus: the kernel depends only on ``j - i`` modulo the grid."""
    R, count = _translation_row(m, V, grid, t, hbar, cutoff, steps, mu, backend, [0])
    return R[0].reshape(grid.shape), count


RADIAL_DEGREE = 96


def radial_table(m, V, t, hbar, cutoff, steps, mu, backend, degree=RADIAL_DEGREE):
    """Chebyshev fits of ``S(d)`` and ``a(d)`` for a homogeneous sphere.

    Without a potential every pair at distance ``d`` is congruent to a pair on
    the equator, so one shot per Chebyshev node covers the whole kernel.
    """
    count = 0
    cache = {}

    def shoot(d):
        nonlocal count
        key = d.tobytes()
        if key not in cache:
            X = np.tile([0.5 * np.pi, 0.0], (len(d), 1))
            Y = np.stack([np.full(len(d), 0.5 * np.pi), d / m.radius], axis=-1)
            xc, yc, Q = prepare_pairs(m, X, Y)
            out = shoot_charted(m, V, t, xc, yc, Q, mu=mu, steps=steps, backend=backend)
            phi, S, a, D, detA, cond = amplitudes_from_shoot(m, t, xc, yc, out)
            bad = np.flatnonzero((out["status"] != 0) | ~(detA > 0) | ~(cond < COND_LIMIT))
            if bad.size:
                code = int(out["status"][bad[0]])
                why = STATUS_TEXT.get(code, f"status {code}") if code else "conjugate point"
                raise AssemblyError(f"radial table at d={d[bad[0]]:.6g}: {why}")
            count += len(d)
            cache[key] = (S, a)
        return cache[key]

    dom = [0.0, cutoff.r_out]
    fit_s = np.polynomial.Chebyshev.interpolate(lambda d: shoot(d)[0], degree, domain=dom)
    fit_a = np.polynomial.Chebyshev.interpolate(lambda d: shoot(d)[1], degree, domain=dom)
    return fit_s, fit_a, count


def _assemble_block_circulant(m, V, grid, t, hbar, cutoff, steps, mu, backend):
    """V = 0 on the sphere: rotations about the polar axis permute the longitudes."""
    n_th, n_ph = grid.shape
    fit_s, fit_a, count = radial_table(m, V, t, hbar, cutoff, steps, mu, backend)
    nodes = grid.nodes
    R = np.zeros((n_th, grid.size), dtype=complex)
    for a in range(n_th):
        d = np.atleast_1d(m.geodesic_distance(np.broadcast_to(nodes[a * n_ph], nodes.shape), nodes))
        js = np.flatnonzero(d < cutoff.r_out)
        dj = d[js]
        R[a, js] = cutoff_value(cutoff, dj) * fit_a(dj) * np.exp(1j * fit_s(dj) / hbar)
    return R.reshape(n_th, n_th, n_ph), count


def _assemble_general(m, V, grid, t, hbar, cutoff, steps, mu, backend):
    """Shoot every pair with ``i <= j`` in the cutoff support; mirror the rest.

    The flow is time reversible, so ``S`` and ``a`` are symmetric in ``(x, y)``.
    """
    nodes = grid.nodes
    N = len(nodes)
    K = np.zeros((N, N), dtype=complex)
    I, J = [], []
    count = 0

    def flush():
        nonlocal count
        if not I:
            return
        ii = np.concatenate(I)
        jj = np.concatenate(J)
        vals, reason = _pair_entries(m, V, t, hbar, cutoff, nodes[ii], nodes[jj], steps, mu, backend)
        if reason is not None:
            b = reason[0]
            raise AssemblyError(f"pair (i={ii[b]}, j={jj[b]}): {reason[1]}")
        K[ii, jj] = vals
        K[jj, ii] = vals
        count += len(ii)
        I.clear()
        J.clear()

    pending = 0
    for i in range(N):
        js = _within(m, nodes[i], nodes[i:], cutoff.r_out) + i
        I.append(np.full(len(js), i))
        J.append(js)
        pending += len(js)
        if pending >= PAIR_CHUNK:
            flush()
            pending = 0
    flush()
    return K, count


def assemble_slice(
    m: Manifold,
    V: Potential,
    grid: QuadratureGrid,
    t: float,
    cutoff: CutoffSpec,
    hbar: float = 1.0,
    steps: int = DEFAULT_STEPS,
    mu: Optional[float] = None,
    backend: Optional[str] = None,
    slice_bound: Optional[float] = None,
    use_symmetry: bool = True,
) -> SliceOperator:
    """Dense kernel of the short-time slice of duration ``t``."""
    if not t > 0:
        raise ValueError("slice duration must be positive")
    if slice_bound is not None and t > slice_bound:
        raise ValueError(f"t = {t} exceeds the slice bound {slice_bound}")
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    if grid.manifold != m:
        raise ValueError("grid belongs to a different manifold")
    cutoff.validate(m)
    mu = default_mu(m) if mu is None else mu
    notes = []
    if not phase_sampling_ok(grid, t, hbar, cutoff.r_out):
        msg = (
            f"phase sampling: spacing {grid_spacing(grid):.4g} > pi*hbar*t/r_out = "
            f"{np.pi * hbar * t / cutoff.r_out:.4g} at t={t!r}, hbar={hbar!r}"
        )
        warnings.warn(msg, PhaseSamplingWarning, stacklevel=2)
        notes.append(msg)
    args = (m, V, grid, t, hbar, cutoff, steps, mu, backend)
    pref = prefactor(m.dim, t, hbar)
    w = grid.weights
    if use_symmetry and V.is_zero and m.kind in ("circle", "torus"):
        R, count = _assemble_circulant(*args)
        action = CirculantKernel(R * (pref * w[0]))
    elif use_symmetry and V.is_zero and m.kind == "sphere":
        R, count = _assemble_block_circulant(*args)
        R *= pref * w.reshape(1, *grid.shape)
        action = BlockCirculantKernel(R, w)
    else:
        K, count = _assemble_general(*args)
        K *= pref * w[None, :]
        action = DenseKernel(K, w)
    return SliceOperator(t, hbar, grid, pref, action, cutoff=cutoff, warnings=notes, pairs_shot=count)


def _check_grid(a: QuadratureGrid, b: QuadratureGrid):
    if a is not b and a.key != b.key:
        raise ValueError("grid mismatch")


def apply(op: SliceOperator, u: WaveFunction) -> WaveFunction:
    _check_grid(op.grid, u.grid)
    return WaveFunction(op.matvec(u.values), u.grid, u.warnings)


class SliceCache:
    """LRU cache of slice operators bounded by total kernel bytes."""

    def __init__(self, max_bytes: float = 2.5e9):
        self.max_bytes = max_bytes
        self._store: "OrderedDict[tuple, SliceOperator]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._store)

    def clear(self):
        self._store.clear()

    @property
    def nbytes(self) -> int:
        return sum(op.nbytes for op in self._store.values())

    def get(self, m, V, grid, t, cutoff, hbar=1.0, steps=DEFAULT_STEPS, **kw) -> SliceOperator:
        key = (m, V, grid.key, float(t), float(hbar), cutoff, int(steps), kw.get("backend"))
        op = self._store.get(key)
        if op is not None:
            self.hits += 1
            self._store.move_to_end(key)
            return op
        self.misses += 1
        op = assemble_slice(m, V, grid, t, cutoff, hbar, steps=steps, **kw)
        self._store[key] = op
        while len(self._store) > 1 and self.nbytes > self.max_bytes:
            self._store.popitem(last=False)
        return op


DEFAULT_CACHE = SliceCache()


def compose_partition(
    m: Manifold,
    V: Potential,
    grid: QuadratureGrid,
    partition: Partition,
    cutoff: CutoffSpec,
    hbar: float,
    u0: WaveFunction,
    cache: Optional[SliceCache] = None,
    **kw,
) -> WaveFunction:
    """``E(t_L) ... E(t_1) u0``; the first slice is applied first."""
    cache = DEFAULT_CACHE if cache is None else cache
    _check_grid(grid, u0.grid)
    u = u0
    for tau in partition.slices:
        u = apply(cache.get(m, V, grid, tau, cutoff, hbar, **kw), u)
    return u


class GridMap:
    """Linear map on grid vectors with its adjoint for ``<u, v> = sum w u conj(v)``.

    ``matvec`` and ``rmatvec`` act on arrays of shape ``(N,)`` or ``(N, B)``.
    """

    def __init__(self, grid: QuadratureGrid, matvec: Callable, rmatvec: Callable):
        self.grid = grid
        self.matvec = matvec
        self.rmatvec = rmatvec

    @classmethod
    def identity(cls, grid):
        return cls(grid, lambda u: u, lambda u: u)

    @classmethod
    def from_matrix(cls, grid, K):
        w = grid.weights
        wcol = lambda u: w.reshape((-1,) + (1,) * (np.ndim(u) - 1))
        return cls(grid, lambda u: K @ u, lambda u: (K.conj().T @ (wcol(u) * u)) / wcol(u))

    @classmethod
    def from_slice(cls, op: SliceOperator):
        return cls(op.grid, op.matvec, op.rmatvec)

    @classmethod
    def power(cls, base: "GridMap", L: int):
        def mv(u):
            for _ in range(L):
                u = base.matvec(u)
            return u

        def rmv(u):
            for _ in range(L):
                u = base.rmatvec(u)
            return u

        return cls(base.grid, mv, rmv)

    @classmethod
    def sequence(cls, maps: Sequence["GridMap"]):
        """``maps[-1] @ ... @ maps[0]``: the first entry acts first."""
        maps = list(maps)
        out = maps[0]
        for mp in maps[1:]:
            out = mp @ out
        return out

    def __matmul__(self, other: "GridMap") -> "GridMap":
        _check_grid(self.grid, other.grid)
        return GridMap(
            self.grid,
            lambda u: self.matvec(other.matvec(u)),
            lambda u: other.rmatvec(self.rmatvec(u)),
        )

    def __sub__(self, other: "GridMap") -> "GridMap":
        _check_grid(self.grid, other.grid)
        return GridMap(
            self.grid,
            lambda u: self.matvec(u) - other.matvec(u),
            lambda u: self.rmatvec(u) - other.rmatvec(u),
        )

    def __add__(self, other: "GridMap") -> "GridMap":
        _check_grid(self.grid, other.grid)
        return GridMap(
            self.grid,
            lambda u: self.matvec(u) + other.matvec(u),
            lambda u: self.rmatvec(u) + other.rmatvec(u),
        )

    def scale(self, c: complex) -> "GridMap":
        return GridMap(self.grid, lambda u: c * self.matvec(u), lambda u: np.conj(c) * self.rmatvec(u))

    def dense(self) -> np.ndarray:
        """Materialize the matrix (tests and small grids only)."""
        return self.matvec(np.eye(self.grid.size, dtype=complex))


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool
    vector: np.ndarray = field(repr=False, default=None)

    def __float__(self):
        return self.value


def _weighted_orthonormalize(g: QuadratureGrid, X: np.ndarray) -> np.ndarray:
    sw = np.sqrt(g.weights)[:, None]
    q, _ = np.linalg.qr(sw * X)
    return q / sw


def operator_norm(
    op_action,
    grid: Optional[QuadratureGrid] = None,
    tol: float = 1e-8,
    maxiter: int = 500,
    seed: int = 0,
    block: int = 8,
    start=None,
    return_info: bool = False,
):
    """Largest weighted-L2 singular value by power iteration on ``A^dagger A``.

    A block of ``block`` vectors is iterated and the estimate is the top
    Rayleigh-Ritz value of the block, which copes with clustered singular
    values; ``block=1`` is the plain single-vector method.  Stops when the
    relative change of the estimate drops below ``tol`` or after ``maxiter``
    iterations.  ``op_action`` is a :class:`GridMap`, a :class:`SliceOperator`
    or a dense matrix (then ``grid`` is required).
    """
    if isinstance(op_action, SliceOperator):
        op_action = GridMap.from_slice(op_action)
    elif isinstance(op_action, np.ndarray):
        op_action = GridMap.from_matrix(grid, op_action)
    g = op_action.grid
    N = g.size
    b = max(1, min(block, N))
    if start is None:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((N, b)) + 1j * rng.standard_normal((N, b))
    else:
        X = np.asarray(start, dtype=complex).reshape(N, -1)
    X = _weighted_orthonormalize(g, X)
    w = g.weights[:, None]
    sigma2, prev = 0.0, None
    it = 0
    converged = False
    top = X[:, 0]
    for it in range(1, maxiter + 1):
        AX = op_action.matvec(X)
        gram = AX.conj().T @ (w * AX)
        evals, evecs = np.linalg.eigh(0.5 * (gram + gram.conj().T))
        sigma2 = max(float(evals[-1]), 0.0)
        top = X @ evecs[:, -1]
        if sigma2 == 0.0:
            converged = True
            break
        if prev is not None and abs(sigma2 - prev) <= tol * sigma2:
            converged = True
            break
        prev = sigma2
        Z = op_action.rmatvec(AX @ evecs[:, ::-1])  # Ritz vectors, largest first
        if not np.any(Z):
            sigma2, converged = 0.0, True
            break
        X = _weighted_orthonormalize(g, Z)
    value = float(np.sqrt(sigma2))
    if return_info:
        return NormEstimate(value, it, converged, top)
    return value


def structured_norm(op: SliceOperator, resolvable: bool = True) -> Optional[float]:
    """Exact ``L2(w)`` norm of an FFT-structured slice; ``None`` for dense ones.

    A circulant kernel on a uniform grid is normal, so its norm is the largest
    multiplier.  On the sphere every longitude frequency ``m`` is its own
    ``n_theta x n_theta`` block; with ``resolvable`` the block is restricted to
    the degrees ``|m| <= l < n_theta`` that the grid integrates exactly.
    """
    A = op.action
    if isinstance(A, CirculantKernel):
        return float(np.abs(A.rhat).max())
    if not isinstance(A, BlockCirculantKernel):
        return None
    sw = np.sqrt(A._w)
    th = op.grid.nodes[:: A.n_ph, 0]
    best = 0.0
    for k in range(A.n_ph):
        blk = sw[:, None] * A.rhat[k] / sw[None, :]
        if resolvable:
            mu = min(k, A.n_ph - k)
            if mu >= A.n_th:
                continue
            ls = np.arange(mu, A.n_th)
            prof = sph_harm_y(ls[None, :], mu, th[:, None], 0.0).real
            blk = blk @ np.linalg.qr(sw[:, None] * prof)[0]
        best = max(best, float(np.linalg.norm(blk, 2)))
    return best


def dump_kernel(op: SliceOperator, path, n: Optional[int] = None) -> None:
    """Binary kernel file: header then row-major interleaved re/im doubles."""
    n = op.grid.manifold.dim if n is None else n
    N = op.size
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, N, n, op.t, op.hbar))
        for rows in op.iter_rows():
            fh.write(np.ascontiguousarray(rows, dtype="<c16").tobytes())


def load_kernel(path):
    """Returns ``(kernel, header_dict)`` from a file written by :func:`dump_kernel`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, N, n, t, hbar = _HEADER.unpack_from(raw, 0)
    if magic != DUMP_MAGIC:
        raise ValueError("not a slice-kernel file")
    if version != DUMP_VERSION:
        raise ValueError(f"unsupported kernel file version {version}")
    body = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if body.size != N * N:
        raise ValueError("truncated kernel file")
    return body.reshape(N, N).astype(complex), {"N": N, "n": n, "t": t, "hbar": hbar, "version": version}
