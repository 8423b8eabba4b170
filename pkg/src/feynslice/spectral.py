"""Laplace eigenbases and the modified Hamiltonian ``-hbar^2 Lap / 2 + V + hbar^2 R / 12``.

Everything is represented in a truncated basis of analytic Laplace
eigenfunctions sampled on the quadrature grid (Galerkin).  Coefficients are
weighted inner products, so ``Phi^H W Phi = I`` whenever the grid integrates
products of retained modes exactly.

Transforms never form the ``N x K`` mode matrix: flat manifolds use FFTs and
the sphere an FFT in longitude followed by associated-Legendre sums.
"""
from __future__ import annotations

import warnings
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import sph_harm_y

from .errors import ResolutionError, TruncationError
from .manifold import Manifold, QuadratureGrid
from .potential import Potential
from .propagator import GridMap, WaveFunction

TRUNCATION_TOL = 1e-6
HERMITIAN_TOL = 1e-9
DENSE_MODE_LIMIT = 2**26  # entries of the mode matrix we are willing to form


class TruncationWarning(UserWarning):
    pass


def real_sph_harm(l: int, mm: int, theta, phi):
    """Real orthonormal spherical harmonic on the unit sphere."""
    if mm == 0:
        return sph_harm_y(l, 0, theta, phi).real
    y = sph_harm_y(l, abs(mm), theta, phi)
    s = np.sqrt(2.0) * (-1.0) ** mm
    return s * (y.real if mm > 0 else y.imag)


class LaplaceBasis:
    """Truncated, ascending Laplace eigenbasis sampled on a grid.

    ``labels`` holds the integer wavevector ``k`` (flat) or ``(l, m)`` (sphere)
    of each mode; ``laplace_eigs`` the eigenvalues of ``-Lap``.
    """

    def __init__(self, grid: QuadratureGrid, laplace_eigs, labels):
        self.grid = grid
        self.laplace_eigs = np.asarray(laplace_eigs, dtype=float)
        self.labels = tuple(labels)
        self._modes = None

    @property
    def truncation(self) -> int:
        return len(self.laplace_eigs)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def synthesize(self, coef: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def modes(self) -> np.ndarray:
        """Dense ``(N, K)`` samples of the modes (small grids only)."""
        if self._modes is None:
            if self.grid.size * self.truncation > DENSE_MODE_LIMIT:
                raise MemoryError("mode matrix too large to materialize")
            self._modes = self.synthesize(np.eye(self.truncation, dtype=complex))
        return self._modes

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.synthesize(self.coefficients(values))

    def truncation_residual(self, values: np.ndarray) -> float:
        """``|u - Pi_K u| / |u|`` (largest over columns; zero for zero input)."""
        values = np.asarray(values)
        cols = values.reshape(len(values), -1)
        sw = np.sqrt(self.grid.weights)[:, None]
        un = np.linalg.norm(sw * cols, axis=0)
        r = np.linalg.norm(sw * (cols - self.project(cols)), axis=0)
        ok = un > 0
        return float(np.max(r[ok] / un[ok])) if np.any(ok) else 0.0


class FourierBasis(LaplaceBasis):
    """Plane waves ``exp(i k . x) / sqrt(vol)`` on a circle or flat torus."""

    def __init__(self, m: Manifold, grid: QuadratureGrid, K: int):
        shape = grid.shape
        if K > grid.size:
            raise TruncationError(f"K = {K} exceeds the {grid.size} grid nodes")
        ranges = [np.arange(-(r // 2), r - r // 2) for r in shape]
        ks = np.stack([g.ravel() for g in np.meshgrid(*ranges, indexing="ij")], axis=-1)
        P = np.asarray(m.periods)
        lam = np.sum((2 * np.pi * ks / P) ** 2, axis=1)
        # ties: smaller |k_i| first, positive before negative (k = 0, 1, -1, 2, -2, ...)
        tie = np.stack([v for c in ks.T for v in (np.abs(c), -np.sign(c))], axis=-1)
        order = np.lexsort(tuple(tie.T[::-1]) + (np.round(lam, 10),))[:K]
        ks = ks[order]
        super().__init__(grid, lam[order], [tuple(int(c) for c in k) for k in ks])
        self.wavevectors = ks
        self._shape = tuple(shape)
        self._idx = tuple((ks % np.asarray(shape)).T)
        self._scale_in = grid.weights[0] / np.sqrt(m.volume)
        self._scale_out = grid.size / np.sqrt(m.volume)

    def coefficients(self, values):
        values = np.asarray(values, dtype=complex)
        extra = values.shape[1:]
        axes = tuple(range(len(self._shape)))
        F = np.fft.fftn(values.reshape(self._shape + extra), axes=axes)
        return F[self._idx] * self._scale_in

    def synthesize(self, coef):
        coef = np.asarray(coef, dtype=complex)
        extra = coef.shape[1:]
        C = np.zeros(self._shape + extra, dtype=complex)
        C[self._idx] = coef
        axes = tuple(range(len(self._shape)))
        return np.fft.ifftn(C, axes=axes).reshape((-1,) + extra) * self._scale_out


class SphereHarmonicBasis(LaplaceBasis):
    """Real spherical harmonics ``Y_lm / r`` ordered by ``l``, then ``m = -l..l``."""

    def __init__(self, m: Manifold, grid: QuadratureGrid, K: int):
        n_th, n_ph = grid.shape
        lmax = int(np.ceil(np.sqrt(K))) - 1
        if lmax > n_th - 1:
            raise TruncationError(f"degree {lmax} exceeds resolution - 1 = {n_th - 1}")
        labels = [(l, mm) for l in range(lmax + 1) for mm in range(-l, l + 1)][:K]
        lam = [l * (l + 1) / m.radius**2 for l, _ in labels]
        super().__init__(grid, lam, labels)
        self._shape = (n_th, n_ph)
        th = grid.nodes[::n_ph, 0]
        self._w = grid.weights[::n_ph]
        self._blocks = []  # (signed m, positions, theta profiles (n_th, n_l))
        lab = np.array(labels)
        for mm in range(-lmax, lmax + 1):
            pos = np.flatnonzero(lab[:, 1] == mm)
            if pos.size == 0:
                continue
            ls = lab[pos, 0]
            mu = abs(mm)
            prof = sph_harm_y(ls[None, :], mu, th[:, None], 0.0).real
            prof *= (np.sqrt(2.0) * (-1.0) ** mu if mu else 1.0) / m.radius
            self._blocks.append((mm, pos, prof))

    def coefficients(self, values):
        values = np.asarray(values, dtype=complex)
        extra = values.shape[1:]
        n_th, n_ph = self._shape
        U = np.fft.fft(values.reshape(n_th, n_ph, -1), axis=1)
        c = np.zeros((self.truncation, U.shape[2]), dtype=complex)
        w = self._w[:, None]
        for mm, pos, prof in self._blocks:
            mu = abs(mm)
            if mm == 0:
                T = U[:, 0]
            elif mm > 0:
                T = 0.5 * (U[:, mu] + U[:, -mu])
            else:
                T = 0.5j * (U[:, mu] - U[:, -mu])
            c[pos] = prof.T @ (w * T)
        return c.reshape((self.truncation,) + extra)

    def synthesize(self, coef):
        coef = np.asarray(coef, dtype=complex)
        extra = coef.shape[1:]
        c = coef.reshape(self.truncation, -1)
        n_th, n_ph = self._shape
        G = np.zeros((n_th, n_ph, c.shape[1]), dtype=complex)
        for mm, pos, prof in self._blocks:
            g = prof @ c[pos]
            mu = abs(mm)
            if mm == 0:
                G[:, 0] += g
            elif mm > 0:
                G[:, mu] += 0.5 * g
                G[:, -mu] += 0.5 * g
            else:
                G[:, mu] += -0.5j * g
                G[:, -mu] += 0.5j * g
        u = np.fft.ifft(G, axis=1) * n_ph
        return u.reshape((n_th * n_ph,) + extra)


def default_truncation(m: Manifold, grid: QuadratureGrid) -> int:
    if m.kind == "sphere":
        return (grid.resolution[0] // 2 + 1) ** 2
    return grid.size // 2


def capacity(m: Manifold, grid: QuadratureGrid) -> int:
    """Largest truncation whose products the grid integrates exactly."""
    if m.kind == "sphere":
        return grid.resolution[0] ** 2
    return grid.size


def build_laplace_basis(m: Manifold, grid: QuadratureGrid, K: Optional[int] = None) -> LaplaceBasis:
    if grid.manifold != m:
        raise ValueError("grid belongs to a different manifold")
    K = default_truncation(m, grid) if K is None else int(K)
    if K < 1:
        raise TruncationError("K must be positive")
    if m.kind == "sphere":
        return SphereHarmonicBasis(m, grid, K)
    return FourierBasis(m, grid, K)


class HTildeSpectrum:
    """Eigen-decomposition of the Galerkin matrix of the modified Hamiltonian.

    ``eigs`` is ascending; ``vecs[:, i]`` holds the Laplace-basis coefficients
    of the i-th eigenvector.  Without a potential the matrix is diagonal and
    ``vecs`` is a permutation, kept implicitly.
    """

    def __init__(self, basis, eigs, vecs, curvature_term_enabled, hbar, potential_block, scalar_curvature,
                 order=None):
        self.basis = basis
        self.eigs = eigs
        self._vecs = vecs
        self._order = order
        self.curvature_term_enabled = curvature_term_enabled
        self.hbar = hbar
        self.potential_block = potential_block
        self.scalar_curvature = scalar_curvature
        self._by_hbar: Dict[float, "HTildeSpectrum"] = {}

    @property
    def diagonal(self) -> bool:
        return self._vecs is None

    @property
    def vecs(self) -> np.ndarray:
        if self._vecs is not None:
            return self._vecs
        P = np.zeros((len(self.eigs), len(self.eigs)), dtype=complex)
        P[self._order, np.arange(len(self.eigs))] = 1.0
        return P

    def kinetic_diagonal(self, hbar=None) -> np.ndarray:
        hb = self.hbar if hbar is None else hbar
        kin = 0.5 * self.basis.laplace_eigs
        if self.curvature_term_enabled:
            kin = kin + self.scalar_curvature / 12.0
        return hb * hb * kin

    def matrix(self, hbar: Optional[float] = None) -> np.ndarray:
        """Galerkin matrix at ``hbar`` (dense; for moderate ``K``)."""
        H = np.diag(self.kinetic_diagonal(hbar)).astype(complex)
        if self.potential_block is not None:
            H = H + self.potential_block
        return H

    def at_hbar(self, hbar: float) -> "HTildeSpectrum":
        if hbar == self.hbar:
            return self
        got = self._by_hbar.get(hbar)
        if got is None:
            got = _decompose(self.basis, self.potential_block, self.curvature_term_enabled,
                             self.scalar_curvature, hbar)
            self._by_hbar[hbar] = got
        return got

    def apply_function(self, f, coef: np.ndarray) -> np.ndarray:
        """``f(H)`` applied to Laplace-basis coefficients ``coef``."""
        shape = (-1,) + (1,) * (np.ndim(coef) - 1)
        if self.diagonal:
            vals = np.empty(len(self.eigs), dtype=complex)
            vals[self._order] = f(self.eigs)
            return vals.reshape(shape) * coef
        fv = f(self.eigs).reshape(shape)
        return self._vecs @ (fv * (self._vecs.conj().T @ coef))


def _decompose(basis, vblock, curv, R, hbar):
    kin = 0.5 * basis.laplace_eigs + (R / 12.0 if curv else 0.0)
    if vblock is None:
        diag = hbar * hbar * kin
        order = np.argsort(diag, kind="stable")
        return HTildeSpectrum(basis, diag[order], None, curv, hbar, None, R, order=order)
    H = np.diag(hbar * hbar * kin).astype(complex) + vblock
    eigs, vecs = np.linalg.eigh(H)
    return HTildeSpectrum(basis, eigs, vecs, curv, hbar, vblock, R)


def potential_block(basis: LaplaceBasis, m: Manifold, V: Potential, chunk: int = 256) -> np.ndarray:
    """``<phi_k, V phi_l>`` by grid quadrature, built a few columns at a time."""
    vals = V(m, basis.grid.nodes)[:, None]
    K = basis.truncation
    out = np.empty((K, K), dtype=complex)
    for lo in range(0, K, chunk):
        hi = min(K, lo + chunk)
        E = np.zeros((K, hi - lo), dtype=complex)
        E[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
        out[:, lo:hi] = basis.coefficients(vals * basis.synthesize(E))
    return out


def diagonalize_htilde(
    basis: LaplaceBasis,
    m: Manifold,
    V: Potential,
    curvature_term_enabled: bool = True,
    hbar: float = 1.0,
) -> HTildeSpectrum:
    vblock = None
    if not V.is_zero:
        vblock = potential_block(basis, m, V)
        asym = np.max(np.abs(vblock - vblock.conj().T))
        if asym > HERMITIAN_TOL:
            raise ResolutionError(f"potential block not Hermitian to {HERMITIAN_TOL} (defect {asym:.3g})")
        vblock = 0.5 * (vblock + vblock.conj().T)
    return _decompose(basis, vblock, bool(curvature_term_enabled), m.scalar_curvature(), float(hbar))


def _truncation_note(basis, values):
    res = basis.truncation_residual(values)
    if res > TRUNCATION_TOL:
        msg = f"truncation: |u - Pi_K u| / |u| = {res:.3g} with K = {basis.truncation}"
        warnings.warn(msg, TruncationWarning, stacklevel=3)
        return (msg,)
    return ()


def _as_values(u):
    return (u.values, u.grid) if isinstance(u, WaveFunction) else (np.asarray(u, dtype=complex), None)


def propagate_values(spec: HTildeSpectrum, t: float, hbar: float, values: np.ndarray) -> np.ndarray:
    s = spec.at_hbar(hbar)
    c = s.basis.coefficients(values)
    return s.basis.synthesize(s.apply_function(lambda e: np.exp(-1j * t * e / hbar), c))


def exact_propagate(spec: HTildeSpectrum, t: float, hbar: float, u) -> WaveFunction:
    """``exp(-i t H(hbar) / hbar)`` applied to the projection of ``u``."""
    values, grid = _as_values(u)
    grid = spec.basis.grid if grid is None else grid
    notes = _truncation_note(spec.basis, values)
    return WaveFunction(propagate_values(spec, t, hbar, values), grid, notes)


def apply_htilde(spec: HTildeSpectrum, hbar: float, values: np.ndarray) -> np.ndarray:
    """The modified Hamiltonian applied spectrally to the projection of ``values``."""
    s = spec.at_hbar(hbar)
    c = s.basis.coefficients(values)
    return s.basis.synthesize(s.apply_function(lambda e: e.astype(complex), c))


def bessel_potential(basis: LaplaceBasis, s: float, values: np.ndarray) -> np.ndarray:
    """``(-Lap + 1)^{-s/2}`` on the projection of ``values``."""
    mult = (basis.laplace_eigs + 1.0) ** (-0.5 * s)
    mult = mult.reshape((-1,) + (1,) * (np.ndim(values) - 1))
    return basis.synthesize(mult * basis.coefficients(values))


def check_epsilon(epsilon: float) -> float:
    if not 0 < epsilon <= 0.5:
        raise ValueError("epsilon must lie in (0, 1/2]")
    return float(epsilon)


def sobolev_smooth(basis: LaplaceBasis, epsilon: float, u) -> WaveFunction:
    """``(-Lap + 1)^{-(1+eps)/2} u``."""
    check_epsilon(epsilon)
    values, grid = _as_values(u)
    notes = _truncation_note(basis, values)
    return WaveFunction(bessel_potential(basis, 1 + epsilon, values), grid or basis.grid, notes)


def h_s_norm(basis: LaplaceBasis, s: float, u) -> float:
    if s < 0:
        raise ValueError("s must be nonnegative")
    values, _ = _as_values(u)
    _truncation_note(basis, values)
    c = basis.coefficients(values)
    return float(np.sqrt(np.sum((basis.laplace_eigs + 1.0) ** s * np.abs(c) ** 2)))


def propagator_map(spec: HTildeSpectrum, t: float, hbar: float = 1.0) -> GridMap:
    g = spec.basis.grid
    return GridMap(g, lambda v: propagate_values(spec, t, hbar, v),
                   lambda v: propagate_values(spec, -t, hbar, v))


def smoothing_map(basis: LaplaceBasis, epsilon: float) -> GridMap:
    check_epsilon(epsilon)
    f = lambda v: bessel_potential(basis, 1 + epsilon, v)
    return GridMap(basis.grid, f, f)


def htilde_map(spec: HTildeSpectrum, hbar: float = 1.0) -> GridMap:
    f = lambda v: apply_htilde(spec, hbar, v)
    return GridMap(spec.basis.grid, f, f)


def projection_map(basis: LaplaceBasis) -> GridMap:
    return GridMap(basis.grid, basis.project, basis.project)


def resolvable_projection(m: Manifold, grid: QuadratureGrid) -> GridMap:
    """Orthogonal projection onto the functions the grid integrates exactly.

    The identity on flat grids.  On the sphere the Gauss x uniform grid has
    ``2 res^2`` nodes but only degrees ``l < res`` are exact, so grid vectors
    are first projected onto those harmonics before measuring L2 norms.
    """
    if m.kind != "sphere":
        return GridMap.identity(grid)
    return projection_map(build_laplace_basis(m, grid, capacity(m, grid)))
