"""Experiment configuration files (TOML).

Top-level keys are flat; ``[manifold]`` and ``[potential]`` are tables.
Unknown keys are rejected, and every error carries the line it refers to.

    resolution = 512
    t = 0.5
    L = [4, 8, 16, 32]

    [manifold]
    kind = "circle"

    [potential]
    kind = "cosine"
    amplitude = 1.0
    wavevector = [1.0]
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..action import CutoffSpec
from ..dynamics import DEFAULT_STEPS
from ..manifold import Circle, FlatTorus, Manifold, RoundSphere
from ..potential import Potential
from ..propagator import Partition
from ..spectral import capacity, check_epsilon


class ConfigError(ValueError):
    """Bad config file; ``line`` is 1-based or ``None`` when not attributable."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.path = path
        super().__init__(str(self))

    def __str__(self):
        where = self.path or "<config>"
        if self.line is not None:
            where += f":{self.line}"
        return f"{where}: {self.message}"


DEFAULT_RESOLUTION = {"circle": 512, "torus": 128, "sphere": 144}

# key -> (accepted python types, description used in messages)
_TOP = {
    "resolution": ((int, list), "grid resolution"),
    "r_in": ((int, float), "cutoff inner radius"),
    "r_out": ((int, float), "cutoff outer radius"),
    "t": ((int, float), "total propagation time"),
    "L": ((int, list), "uniform slice counts"),
    "partition": ((list,), "explicit slice lists"),
    "epsilon": ((int, float), "Sobolev parameter"),
    "hbar": ((int, float, list), "Planck constant(s)"),
    "hbar_scaled_resolution": ((bool,), "scale resolution by 1/hbar"),
    "K": ((int,), "basis truncation"),
    "curvature_term_enabled": ((bool,), "include R/12"),
    "seed": ((int,), "random seed"),
    "slice_bound": ((int, float), "largest admissible slice"),
    "steps": ((int,), "integrator steps"),
    "times": ((list,), "slice durations for sweeps"),
    "n_points": ((int,), "curvature sample points"),
    "battery_modes": ((int,), "low modes in the test battery"),
    "battery_random": ((int,), "random draws in the test battery"),
    "band_limit": ((int,), "band limit of random draws"),
    "ab_comparison": ((bool,), "curvature on/off comparison"),
    "unsmoothed_diagnostic": ((bool,), "also measure without smoothing"),
    "self_difference": ((bool,), "zero-map control"),
    "refinement_check": ((bool,), "repeat stability at doubled resolution"),
    "fd_step": ((int, float), "relative time step of the consistency derivative"),
    "power_tol": ((int, float), "power iteration tolerance"),
    "power_maxiter": ((int,), "power iteration cap"),
    "power_block": ((int,), "power iteration block size"),
}
_MANIFOLD = {"kind", "circumference", "periods", "radius"}
_POTENTIAL = {"kind", "amplitude", "wavevector", "phase", "terms"}
_TERM = {"amplitude", "wavevector", "phase"}


@dataclass(frozen=True)
class ExperimentConfig:
    manifold: Manifold
    potential: Potential
    resolution: Tuple[int, ...]
    cutoff: CutoffSpec
    t: float = 0.5
    schedule: Tuple[Partition, ...] = ()
    epsilon: float = 0.5
    hbar: Tuple[float, ...] = (1.0,)
    hbar_scaled_resolution: bool = True
    K: Optional[int] = None
    curvature_term_enabled: bool = True
    seed: int = 0
    slice_bound: Optional[float] = None
    steps: int = DEFAULT_STEPS
    times: Optional[Tuple[float, ...]] = None
    n_points: int = 10
    battery_modes: int = 8
    battery_random: int = 8
    band_limit: Optional[int] = None
    ab_comparison: bool = True
    unsmoothed_diagnostic: bool = False
    self_difference: bool = False
    refinement_check: bool = False
    fd_step: float = 1e-3
    power_tol: float = 1e-6
    power_maxiter: int = 500
    power_block: int = 8
    source: str = field(default="", compare=False, repr=False)
    canonical: str = field(default="", compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()[:16]

    def resolution_for(self, hbar: float) -> Tuple[int, ...]:
        if not self.hbar_scaled_resolution or hbar == 1.0:
            return self.resolution
        return tuple(int(round(r / hbar)) for r in self.resolution)


def _line_of(text: str, table: Optional[str], key: str) -> Optional[int]:
    """First line assigning ``key`` inside ``[table]`` (``None`` = top level)."""
    current = None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[+\s*([^\]]+?)\s*\]+", line)
        if head:
            current = head.group(1).split(".")[0]
            continue
        if current == table and pat.match(line):
            return no
    return None


def _table_line(text, table):
    for no, line in enumerate(text.splitlines(), 1):
        if re.match(rf"^\s*\[\s*{re.escape(table)}\s*\]", line):
            return no
    return None


class _Parser:
    def __init__(self, text, path):
        self.text = text
        self.path = path

    def fail(self, msg, table=None, key=None):
        line = _line_of(self.text, table, key) if key else (_table_line(self.text, table) if table else None)
        raise ConfigError(msg, line, self.path)

    def number(self, raw, key, table=None, positive=False):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            self.fail(f"{key} must be a number", table, key)
        v = float(raw)
        if not math.isfinite(v):
            self.fail(f"{key} must be finite", table, key)
        if positive and not v > 0:
            self.fail(f"{key} must be positive", table, key)
        return v

    def manifold(self, tab):
        if not isinstance(tab, dict):
            self.fail("manifold must be a table", key="manifold")
        for k in tab:
            if k not in _MANIFOLD:
                self.fail(f"unknown key {k!r} in [manifold]", "manifold", k)
        kind = tab.get("kind")
        try:
            if kind == "circle":
                extra = set(tab) - {"kind", "circumference"}
                if extra:
                    k = sorted(extra)[0]
                    self.fail(f"{k!r} does not apply to a circle", "manifold", k)
                return Circle(self.number(tab.get("circumference", 2 * math.pi), "circumference", "manifold", True))
            if kind == "torus":
                extra = set(tab) - {"kind", "periods"}
                if extra:
                    k = sorted(extra)[0]
                    self.fail(f"{k!r} does not apply to a torus", "manifold", k)
                periods = tab.get("periods", [2 * math.pi, 2 * math.pi])
                if not isinstance(periods, list) or not periods:
                    self.fail("periods must be a non-empty list", "manifold", "periods")
                return FlatTorus(tuple(self.number(p, "periods", "manifold", True) for p in periods))
            if kind == "sphere":
                extra = set(tab) - {"kind", "radius"}
                if extra:
                    k = sorted(extra)[0]
                    self.fail(f"{k!r} does not apply to a sphere", "manifold", k)
                return RoundSphere(self.number(tab.get("radius", 1.0), "radius", "manifold", True))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            self.fail(str(exc), "manifold", "kind")
        self.fail(f"manifold kind must be circle, torus or sphere, not {kind!r}",
                  "manifold", "kind" if kind is not None else None)

    def term(self, raw, table, m):
        amp = self.number(raw.get("amplitude", 1.0), "amplitude", table)
        wv = raw.get("wavevector")
        if wv is None:
            wv = [1.0] if m.dim == 1 else None
        if not isinstance(wv, list) or not wv:
            self.fail("wavevector must be a non-empty list", table, "wavevector")
        wv = [self.number(c, "wavevector", table) for c in wv]
        d = 3 if m.kind == "sphere" else m.dim
        if len(wv) != d:
            self.fail(f"wavevector must have {d} components on a {m.kind}", table, "wavevector")
        return {"amplitude": amp, "wavevector": wv, "phase": self.number(raw.get("phase", 0.0), "phase", table)}

    def potential(self, tab, m):
        if tab is None:
            return Potential.zero(), {"kind": "zero"}
        if not isinstance(tab, dict):
            self.fail("potential must be a table", key="potential")
        for k in tab:
            if k not in _POTENTIAL:
                self.fail(f"unknown key {k!r} in [potential]", "potential", k)
        kind = tab.get("kind", "zero")
        if kind == "zero":
            if set(tab) - {"kind"}:
                self.fail("the zero potential takes no parameters", "potential")
            return Potential.zero(), {"kind": "zero"}
        if kind == "cosine":
            if "terms" in tab:
                self.fail("terms belongs to a tabulated potential", "potential", "terms")
            term = self.term(tab, "potential", m)
            return Potential.tabulated([term]), {"kind": "cosine", "terms": [term]}
        if kind == "tabulated":
            extra = set(tab) - {"kind", "terms"}
            if extra:
                k = sorted(extra)[0]
                self.fail(f"{k!r} is not used by a tabulated potential; list it under terms", "potential", k)
            raw = tab.get("terms")
            if not isinstance(raw, list) or not raw:
                self.fail("tabulated potential needs a non-empty terms list", "potential", "terms")
            terms = []
            for item in raw:
                if not isinstance(item, dict):
                    self.fail("each term must be a table", "potential", "terms")
                for k in item:
                    if k not in _TERM:
                        self.fail(f"unknown key {k!r} in potential term", "potential", k)
                terms.append(self.term(item, "potential", m))
            return Potential.tabulated(terms), {"kind": "tabulated", "terms": terms}
        self.fail(f"potential kind must be zero, cosine or tabulated, not {kind!r}", "potential", "kind")


def _ints(p, raw, key, minimum=1):
    vals = raw if isinstance(raw, list) else [raw]
    if not vals:
        p.fail(f"{key} must not be empty", key=key)
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, int):
            p.fail(f"{key} entries must be integers", key=key)
        if v < minimum:
            p.fail(f"{key} entries must be at least {minimum}", key=key)
        out.append(int(v))
    return tuple(out)


def loads(text: str, path: Optional[str] = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"parse error: {exc}", int(m.group(1)) if m else None, path) from None
    p = _Parser(text, path)

    for k, v in data.items():
        if k in ("manifold", "potential"):
            continue
        if k not in _TOP:
            p.fail(f"unknown key {k!r}", key=k)
        types, what = _TOP[k]
        if isinstance(v, bool) and bool not in types:
            p.fail(f"{k} ({what}) has the wrong type", key=k)
        if not isinstance(v, types):
            p.fail(f"{k} ({what}) has the wrong type", key=k)
    if "manifold" not in data:
        raise ConfigError("missing [manifold] table", None, path)

    m = p.manifold(data["manifold"])
    V, vdesc = p.potential(data.get("potential"), m)
    kw = {}

    res = data.get("resolution", DEFAULT_RESOLUTION[m.kind])
    res = _ints(p, res, "resolution", 4)
    if m.kind == "circle" or m.kind == "sphere":
        if len(res) != 1:
            p.fail(f"resolution on a {m.kind} is a single integer", key="resolution")
    elif len(res) == 1:
        res = res * m.dim
    elif len(res) != m.dim:
        p.fail(f"resolution needs {m.dim} entries on this torus", key="resolution")
    grid = m.build_grid(res)

    default = CutoffSpec.default(m)
    r_in = p.number(data.get("r_in", default.r_in), "r_in", positive=True)
    r_out = p.number(data.get("r_out", default.r_out), "r_out", positive=True)
    cutoff = CutoffSpec(r_in, r_out)
    try:
        cutoff.validate(m)
    except ValueError as exc:
        p.fail(str(exc), key="r_out" if "r_out" in data else "r_in")

    t = p.number(data.get("t", 0.5), "t", positive=True)

    if "epsilon" in data:
        try:
            kw["epsilon"] = check_epsilon(p.number(data["epsilon"], "epsilon"))
        except ValueError as exc:
            p.fail(str(exc), key="epsilon")

    hb = data.get("hbar", 1.0)
    hb = hb if isinstance(hb, list) else [hb]
    if not hb:
        p.fail("hbar must not be empty", key="hbar")
    hbars = tuple(p.number(h, "hbar", positive=True) for h in hb)

    if "L" in data and "partition" in data:
        p.fail("give either L or partition, not both", key="partition")
    sched = []
    if "partition" in data:
        raw = data["partition"]
        if not raw or not all(isinstance(s, list) for s in raw):
            p.fail("partition must be a list of slice lists", key="partition")
        for sl in raw:
            vals = [p.number(x, "partition") for x in sl]
            if not vals:
                p.fail("empty slice list in partition", key="partition")
            if min(vals) <= 0:
                p.fail("partition slices must be positive", key="partition")
            if abs(sum(vals) - t) > 1e-12 * max(1.0, t):
                p.fail(f"partition slices sum to {sum(vals)!r}, not t = {t!r}", key="partition")
            sched.append(Partition(tuple(vals)))
    else:
        Ls = _ints(p, data.get("L", [4, 8, 16, 32]), "L")
        if list(Ls) != sorted(set(Ls)):
            p.fail("L values must be strictly ascending", key="L")
        sched = [Partition.uniform(t, L) for L in Ls]
    sched.sort(key=len)

    if "slice_bound" in data:
        sb = p.number(data["slice_bound"], "slice_bound", positive=True)
        kw["slice_bound"] = sb
        worst = max(pt.mesh for pt in sched)
        if worst > sb:
            p.fail(f"partition mesh {worst!r} exceeds slice_bound {sb!r}", key="slice_bound")

    if "K" in data:
        K = _ints(p, data["K"], "K")[0]
        cap = capacity(m, grid)
        if K > cap:
            p.fail(f"K = {K} exceeds the {cap} modes this grid resolves", key="K")
        kw["K"] = K

    if "times" in data:
        ts = tuple(p.number(x, "times", positive=True) for x in data["times"])
        if not ts:
            p.fail("times must not be empty", key="times")
        if "slice_bound" in kw and max(ts) > kw["slice_bound"]:
            p.fail("a sweep time exceeds slice_bound", key="times")
        kw["times"] = tuple(sorted(ts))

    for key in ("steps", "n_points", "battery_modes", "battery_random", "band_limit",
                "power_maxiter", "power_block", "seed"):
        if key in data:
            kw[key] = _ints(p, data[key], key, 0 if key in ("seed", "battery_modes", "battery_random") else 1)[0]
    if kw.get("battery_modes", 8) + kw.get("battery_random", 8) == 0:
        p.fail("the test battery is empty", key="battery_random")
    if "fd_step" in data:
        fd = p.number(data["fd_step"], "fd_step", positive=True)
        if fd >= 0.25:
            p.fail("fd_step must be below 1/4 so that t - 2h stays positive", key="fd_step")
        kw["fd_step"] = fd
    if "power_tol" in data:
        kw["power_tol"] = p.number(data["power_tol"], "power_tol", positive=True)
    for key in ("hbar_scaled_resolution", "curvature_term_enabled", "ab_comparison",
                "unsmoothed_diagnostic", "self_difference", "refinement_check"):
        if key in data:
            kw[key] = data[key]

    canonical = json.dumps(
        {
            "manifold": {"kind": m.kind, **{k: v for k, v in data["manifold"].items() if k != "kind"}},
            "potential": vdesc,
            "resolution": list(res),
            "r_in": r_in,
            "r_out": r_out,
            "t": t,
            "schedule": [list(pt.slices) for pt in sched],
            "hbar": list(hbars),
            **{k: (list(v) if isinstance(v, tuple) else v) for k, v in kw.items()},
        },
        sort_keys=True,
    )
    return ExperimentConfig(
        manifold=m, potential=V, resolution=res, cutoff=cutoff, t=t, schedule=tuple(sched),
        hbar=hbars, source=text, canonical=canonical, **kw,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return loads(text, str(path))
