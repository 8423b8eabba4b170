"""The four experiments behind the CLI.

Each ``run_*`` returns a :class:`Report`: a fixed column list, data rows,
fit rows and warning rows.  Rows carry plain floats; formatting is the CSV
writer's business.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..action import diagonal_laplacian_of_a
from ..propagator import (
    GridMap, NormEstimate, PhaseSamplingWarning, SliceCache, assemble_slice, operator_norm,
    structured_norm,
)
from ..spectral import (
    TruncationWarning, build_laplace_basis, diagonalize_htilde, h_s_norm, htilde_map,
    propagator_map, resolvable_projection, smoothing_map,
)
from .config import ExperimentConfig

STABILITY_TIMES = (0.0125, 0.025, 0.05, 0.1)
CONSISTENCY_TIMES = (0.02, 0.04, 0.08, 0.16)
FIT_WINDOW = 3


@dataclass
class Report:
    experiment: str
    columns: List[str]
    config_hash: str
    rows: List[Dict] = field(default_factory=list)
    fits: List[Dict] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def add_warning(self, msg: str):
        if msg not in self.notes:
            self.notes.append(msg)

    def data(self, **match):
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def fit(self, **match) -> Optional[Dict]:
        hits = [f for f in self.fits if all(f.get(k) == v for k, v in match.items())]
        return hits[0] if hits else None


class _Collect(warnings.catch_warnings):
    """Record phase-sampling and truncation warnings into a report."""

    def __init__(self, report: Report):
        super().__init__(record=True)
        self.report = report

    def __enter__(self):
        self.log = super().__enter__()
        warnings.simplefilter("always", PhaseSamplingWarning)
        warnings.simplefilter("always", TruncationWarning)
        return self

    def __exit__(self, *exc):
        out = super().__exit__(*exc)
        for w in self.log:
            if issubclass(w.category, (PhaseSamplingWarning, TruncationWarning)):
                self.report.add_warning(str(w.message))
            else:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        return out


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``; ``nan`` below two points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(y <= 0) or np.any(x <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _clock(deterministic):
    t0 = time.perf_counter()
    return lambda: 0.0 if deterministic else time.perf_counter() - t0


def _norm_kw(cfg: ExperimentConfig):
    return dict(tol=cfg.power_tol, maxiter=cfg.power_maxiter, seed=cfg.seed, block=cfg.power_block,
                return_info=True)


def _battery(basis, cfg: ExperimentConfig):
    """First Laplace modes plus seeded random band-limited draws, unit L2 norm."""
    K = basis.truncation
    cols = []
    for k in range(min(cfg.battery_modes, K)):
        c = np.zeros(K, dtype=complex)
        c[k] = 1.0
        cols.append(c)
    band = min(K, cfg.band_limit or max(cfg.battery_modes, K // 4))
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.battery_random):
        c = np.zeros(K, dtype=complex)
        c[:band] = rng.standard_normal(band) + 1j * rng.standard_normal(band)
        cols.append(c / np.linalg.norm(c))
    return basis.synthesize(np.array(cols).T)


class _Slices:
    """Slice operators for one (grid, hbar), assembled once per duration."""

    def __init__(self, cfg, grid, hbar):
        self.cfg, self.grid, self.hbar = cfg, grid, hbar
        self.cache = SliceCache()

    def __call__(self, tau) -> GridMap:
        c = self.cfg
        op = self.cache.get(c.manifold, c.potential, self.grid, tau, c.cutoff, self.hbar,
                            steps=c.steps, slice_bound=c.slice_bound)
        return GridMap.from_slice(op)


def _composed(slices: _Slices, partition) -> GridMap:
    durations = partition.slices
    if len(set(durations)) == 1:
        return GridMap.power(slices(durations[0]), len(durations))
    return GridMap.sequence([slices(tau) for tau in durations])


CONVERGENCE_COLUMNS = ["hbar", "L", "mesh", "err_op", "err_worst_test", "constant_C",
                       "err_unsmoothed", "power_iterations", "runtime_seconds"]


def run_convergence(cfg: ExperimentConfig, deterministic: bool = False,
                    curvature_term_enabled: Optional[bool] = None, report: Optional[Report] = None):
    """Operator-norm error of the time-sliced propagator against the exact one."""
    curv = cfg.curvature_term_enabled if curvature_term_enabled is None else curvature_term_enabled
    rep = report or Report("converge", CONVERGENCE_COLUMNS, cfg.config_hash)
    m, eps = cfg.manifold, cfg.epsilon
    with _Collect(rep):
        for hbar in cfg.hbar:
            grid = m.build_grid(cfg.resolution_for(hbar))
            basis = build_laplace_basis(m, grid, cfg.K if hbar == 1.0 or not cfg.hbar_scaled_resolution else None)
            spec = diagonalize_htilde(basis, m, cfg.potential, curvature_term_enabled=curv, hbar=hbar)
            exact = propagator_map(spec, cfg.t, hbar)
            smooth = smoothing_map(basis, eps)
            tests = _battery(basis, cfg)
            smoothed_tests = smooth.matvec(tests)
            test_norms = np.array([h_s_norm(basis, 0.0, tests[:, j]) for j in range(tests.shape[1])])
            slices = _Slices(cfg, grid, hbar)
            rows = []
            for part in cfg.schedule:
                clock = _clock(deterministic)
                approx = exact if cfg.self_difference else _composed(slices, part)
                diff = approx - exact
                est = operator_norm(diff @ smooth, **_norm_kw(cfg))
                if not est.converged:
                    rep.add_warning(f"power iteration stopped at {est.iterations} iterations (L={len(part)})")
                out = diff.matvec(smoothed_tests)
                worst = float(max(grid.norm(out[:, j]) / test_norms[j] for j in range(out.shape[1])))
                unsmoothed = math.nan
                if cfg.unsmoothed_diagnostic:
                    unsmoothed = operator_norm(diff @ resolvable_projection(m, grid), **_norm_kw(cfg)).value
                row = {
                    "hbar": hbar, "L": len(part), "mesh": part.mesh, "err_op": est.value,
                    "err_worst_test": worst, "constant_C": est.value / (cfg.t * part.mesh**eps),
                    "err_unsmoothed": unsmoothed, "power_iterations": est.iterations,
                    "runtime_seconds": clock(), "curvature_term_enabled": curv,
                }
                rows.append(row)
            rep.rows.extend(rows)
            window = rows[-FIT_WINDOW:]
            slope = loglog_slope([r["mesh"] for r in window], [r["err_op"] for r in window])
            if len(rows) < 2:
                slope = math.nan
            rep.fits.append({"hbar": hbar, "slope": slope, "curvature_term_enabled": curv,
                             "message": f"log(err_op) vs log(mesh) over L={[r['L'] for r in window]}"})
    return rep


STABILITY_COLUMNS = ["hbar", "t", "norm", "bound", "bound_ok", "norm_refined", "norm_method",
                     "power_iterations", "runtime_seconds"]


def _slice_norm(cfg, grid, tau, hbar):
    op = assemble_slice(cfg.manifold, cfg.potential, grid, tau, cfg.cutoff, hbar,
                        steps=cfg.steps, slice_bound=cfg.slice_bound)
    exact = structured_norm(op)
    if exact is not None:
        return NormEstimate(exact, 0, True), "structured"
    # on the sphere only harmonics the grid integrates exactly are meaningful inputs
    est = operator_norm(GridMap.from_slice(op) @ resolvable_projection(cfg.manifold, grid), **_norm_kw(cfg))
    return est, "power"


def run_stability(cfg: ExperimentConfig, deterministic: bool = False):
    """Norms of single slices over a sweep of durations."""
    rep = Report("stability", STABILITY_COLUMNS, cfg.config_hash)
    times = cfg.times or STABILITY_TIMES
    hbar = cfg.hbar[0]
    with _Collect(rep):
        grid = cfg.manifold.build_grid(cfg.resolution_for(hbar))
        fine = None
        if cfg.refinement_check:
            fine = cfg.manifold.build_grid(tuple(2 * r for r in cfg.resolution_for(hbar)))
        rows = []
        for tau in times:
            clock = _clock(deterministic)
            est, method = _slice_norm(cfg, grid, tau, hbar)
            refined = _slice_norm(cfg, fine, tau, hbar)[0].value if fine is not None else math.nan
            if not est.converged:
                rep.add_warning(f"power iteration stopped at {est.iterations} iterations (t={tau!r})")
            rows.append({"hbar": hbar, "t": tau, "norm": est.value, "norm_refined": refined,
                         "norm_method": method, "power_iterations": est.iterations,
                         "runtime_seconds": clock()})
        # smallest single C with norm <= 1 + C t on the whole sweep
        C = max((r["norm"] - 1.0) / r["t"] for r in rows)
        for r in rows:
            r["bound"] = math.exp(2 * C * r["t"]) if C > 0 else 1.0
            r["bound_ok"] = bool(r["norm"] <= r["bound"])
            if not r["bound_ok"]:
                rep.add_warning(f"norm {r['norm']:.6g} exceeds exp(2Ct) at t={r['t']!r}")
        rep.rows.extend(rows)
        rep.fits.append({"hbar": hbar, "slope": C, "message": "C = max over t of (norm - 1)/t"})
    return rep


CONSISTENCY_COLUMNS = ["hbar", "t", "battery_max_ratio", "maximizer_ratio", "max_ratio", "power_iterations",
                       "runtime_seconds"]


def _time_derivative(slices, tau, h):
    """d/dt of the slice: central differences at h and 2h, Richardson-combined.

    The error of one central quotient on a mode of frequency w is about
    (h w)^2 / 6; for the modes in the cutoff transition band at small t that
    is O(1) unless h is far below t^2, so the h^2 term is eliminated.
    """
    d1 = (slices(tau + h) - slices(tau - h)).scale(1 / (2 * h))
    d2 = (slices(tau + 2 * h) - slices(tau - 2 * h)).scale(1 / (4 * h))
    return d1.scale(4 / 3) - d2.scale(1 / 3)


def run_consistency(cfg: ExperimentConfig, deterministic: bool = False):
    """Residual of the slice as an approximate solution, relative to the smoothing norm."""
    rep = Report("consistency", CONSISTENCY_COLUMNS, cfg.config_hash)
    times = cfg.times or CONSISTENCY_TIMES
    hbar = cfg.hbar[0]
    m, eps = cfg.manifold, cfg.epsilon
    with _Collect(rep):
        grid = m.build_grid(cfg.resolution_for(hbar))
        basis = build_laplace_basis(m, grid, cfg.K)
        spec = diagonalize_htilde(basis, m, cfg.potential, curvature_term_enabled=cfg.curvature_term_enabled,
                                  hbar=hbar)
        H = htilde_map(spec, hbar)
        smooth = smoothing_map(basis, eps)
        tests = _battery(basis, cfg)
        sob = np.array([h_s_norm(basis, 1 + eps, tests[:, j]) for j in range(tests.shape[1])])
        slices = _Slices(cfg, grid, hbar)
        for tau in times:
            clock = _clock(deterministic)
            E = slices(tau)
            R = _time_derivative(slices, tau, tau * cfg.fd_step).scale(1j * hbar) - H @ E
            out = R.matvec(tests)
            battery = float(max(grid.norm(out[:, j]) / sob[j] for j in range(out.shape[1])))
            est = operator_norm(R @ smooth, **_norm_kw(cfg))
            rep.rows.append({"hbar": hbar, "t": tau, "battery_max_ratio": battery,
                             "maximizer_ratio": est.value, "max_ratio": max(battery, est.value),
                             "power_iterations": est.iterations, "runtime_seconds": clock()})
        slope = loglog_slope([r["t"] for r in rep.rows], [r["max_ratio"] for r in rep.rows])
        rep.fits.append({"hbar": hbar, "slope": slope, "message": "log(max_ratio) vs log(t)"})
    return rep


CURVATURE_COLUMNS = ["section", "x0_1", "x0_2", "measured", "expected", "abs_error",
                     "curvature_term_enabled", "L", "mesh", "err_op", "plateau", "runtime_seconds"]


def sample_points(m, n, seed):
    rng = np.random.default_rng(seed)
    if m.kind == "sphere":
        z = rng.uniform(-0.9, 0.9, n)  # stay clear of the chart's polar margin
        return np.stack([np.arccos(z), rng.uniform(0, 2 * np.pi, n)], axis=-1)
    return rng.uniform(0, 1, (n, m.dim)) * np.array(m.periods)


def run_curvature_check(cfg: ExperimentConfig, deterministic: bool = False):
    """Diagonal Laplacian of the amplitude against R/6, then the curvature-term A/B."""
    rep = Report("curvature-check", CURVATURE_COLUMNS, cfg.config_hash)
    m = cfg.manifold
    with _Collect(rep):
        for x0 in sample_points(m, cfg.n_points, cfg.seed):
            clock = _clock(deterministic)
            val = diagonal_laplacian_of_a(m, cfg.potential, x0)
            exp = m.scalar_curvature(x0) / 6.0
            rep.rows.append({"section": "diagonal", "x0_1": float(x0[0]),
                             "x0_2": float(x0[1]) if len(x0) > 1 else math.nan,
                             "measured": val, "expected": exp, "abs_error": abs(val - exp),
                             "runtime_seconds": clock()})
    if cfg.ab_comparison:
        hbar = cfg.hbar[0]
        plateau = abs(1 - np.exp(-1j * cfg.t * hbar * m.scalar_curvature() / 12))
        for flag in (True, False):
            sub = run_convergence(cfg, deterministic, curvature_term_enabled=flag)
            for r in sub.rows:
                if r["hbar"] != hbar:
                    continue
                rep.rows.append({"section": "ab", "curvature_term_enabled": flag, "L": r["L"],
                                 "mesh": r["mesh"], "err_op": r["err_op"], "plateau": plateau,
                                 "runtime_seconds": r["runtime_seconds"]})
            f = sub.fit(hbar=hbar)
            rep.fits.append({"section": "ab", "curvature_term_enabled": flag, "slope": f["slope"],
                             "message": f["message"]})
            for n in sub.notes:
                rep.add_warning(n)
    return rep


EXPERIMENTS = {
    "converge": run_convergence,
    "stability": run_stability,
    "consistency": run_consistency,
    "curvature-check": run_curvature_check,
}
