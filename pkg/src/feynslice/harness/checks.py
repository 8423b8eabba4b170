"""Tolerance checks for ``--check`` mode, read from the expectations file."""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    value: float
    detail: str


def load_expectations(path: Optional[str] = None) -> Dict:
    if path is None:
        text = resources.files("feynslice.harness").joinpath("expectations.toml").read_text()
    else:
        text = Path(path).read_text()
    return tomllib.loads(text)


def convergence_checks(rows, fit, eps, exp, label="", self_difference=False) -> List[Check]:
    """Monotone decrease over the fit window, rate and overall reduction."""
    tag = f" [{label}]" if label else ""
    if self_difference:
        worst = max(r["err_op"] for r in rows)
        tol = exp["converge"]["self_difference_tol"]
        return [Check("zero-map control" + tag, worst <= tol, worst, f"max err_op {worst:.3g} <= {tol:g}")]
    out = []
    window = rows[-3:]
    errs = [r["err_op"] for r in window]
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    out.append(Check("monotone decrease" + tag, mono, errs[-1], f"err_op over L={[r['L'] for r in window]}"))
    need = eps - exp["converge"]["slope_margin"]
    slope = fit["slope"]
    out.append(Check("convergence slope" + tag, bool(slope >= need), slope, f"slope {slope:.4g} >= {need:.4g}"))
    if len(rows) >= 2:
        first, last = rows[0], rows[-1]
        factor = (last["L"] / first["L"]) ** eps / 2 ** exp["converge"]["ratio_offset_log2"]
        ratio = first["err_op"] / last["err_op"] if last["err_op"] > 0 else math.inf
        out.append(Check("overall reduction" + tag, bool(ratio >= factor), ratio,
                         f"err(L={first['L']}) / err(L={last['L']}) = {ratio:.4g} >= {factor:.4g}"))
    return out


def check_convergence(report, cfg, exp) -> List[Check]:
    out = []
    for f in report.fits:
        rows = report.data(hbar=f["hbar"])
        out += convergence_checks(rows, f, cfg.epsilon, exp, f"hbar={f['hbar']:g}", cfg.self_difference)
    return out


def check_stability(report, cfg, exp) -> List[Check]:
    e = exp["stability"]
    C = report.fits[0]["slope"]
    out = []
    for r in report.rows:
        lin = 1 + max(C, 0.0) * r["t"]
        out.append(Check(f"norm <= 1 + C t at t={r['t']:g}", r["norm"] <= lin * (1 + 1e-12), r["norm"],
                         f"{r['norm']:.6g} <= {lin:.6g}"))
        out.append(Check(f"norm <= exp(2 C t) at t={r['t']:g}", r["bound_ok"], r["norm"],
                         f"{r['norm']:.6g} <= {r['bound']:.6g}"))
        if cfg.manifold.kind == "circle" and cfg.resolution_for(r["hbar"])[0] >= e["circle_min_resolution"]:
            ok = e["circle_min_norm"] <= r["norm"] <= e["circle_max_norm"]
            out.append(Check(f"circle window at t={r['t']:g}", ok, r["norm"],
                             f"{r['norm']:.6g} in [{e['circle_min_norm']}, {e['circle_max_norm']}]"))
        if not math.isnan(r["norm_refined"]):
            dv = abs(r["norm"] - r["norm_refined"])
            out.append(Check(f"refinement at t={r['t']:g}", dv < e["refinement_tol"], dv,
                             f"|norm - norm(2x res)| = {dv:.3g} < {e['refinement_tol']:g}"))
    # C only means something if (norm - 1)/t stays bounded as t -> 0
    lo, hi = report.rows[0], report.rows[-1]
    if len(report.rows) >= 2 and hi["norm"] > 1:
        growth = ((lo["norm"] - 1) / lo["t"]) / ((hi["norm"] - 1) / hi["t"])
        lim = e["max_ratio_growth"]
        out.append(Check("(norm - 1)/t bounded as t -> 0", growth <= lim, growth,
                         f"ratio at t={lo['t']:g} over ratio at t={hi['t']:g} = {growth:.4g} <= {lim:g}"))
    return out


def check_consistency(report, cfg, exp) -> List[Check]:
    slope = report.fits[0]["slope"]
    need = cfg.epsilon - exp["consistency"]["slope_margin"]
    return [Check("consistency slope", bool(slope >= need), slope, f"slope {slope:.4g} >= {need:.4g}")]


def check_curvature(report, cfg, exp) -> List[Check]:
    e = exp["curvature"]
    out = []
    diag = report.data(section="diagonal")
    if diag:
        flat = cfg.manifold.scalar_curvature() == 0
        tol = e["flat_tol"] if flat else e["curved_tol"]
        worst = max(r["abs_error"] for r in diag)
        out.append(Check("diagonal Laplacian of a = R/6", worst <= tol, worst, f"max abs error {worst:.3g} <= {tol:g}"))
    on = report.data(section="ab", curvature_term_enabled=True)
    off = report.data(section="ab", curvature_term_enabled=False)
    if on and off:
        fit_on = report.fit(section="ab", curvature_term_enabled=True)
        out += convergence_checks(on, fit_on, cfg.epsilon, exp, "R/12 enabled")
        plateau = off[-1]["plateau"]
        last = off[-1]["err_op"]
        lo = (1 - e["plateau_rel_tol"]) * plateau
        out.append(Check("R/12 disabled stays at the plateau", last >= lo, last,
                         f"err_op(L={off[-1]['L']}) = {last:.4g} >= {lo:.4g} (plateau {plateau:.4g})"))
        floor = e["plateau_floor_fraction"] * cfg.manifold.scalar_curvature() / 12 * cfg.t * cfg.hbar[0]
        out.append(Check("R/12 disabled above half the drift", last > floor, last, f"{last:.4g} > {floor:.4g}"))
    return out


CHECKS = {
    "converge": check_convergence,
    "stability": check_stability,
    "consistency": check_consistency,
    "curvature-check": check_curvature,
}
