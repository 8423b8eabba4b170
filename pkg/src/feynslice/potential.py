"""Smooth potentials written as finite trigonometric sums.

A potential is ``V(z) = sum_m A_m cos(k_m . z + phase_m)`` where ``z`` is the
chart point on the circle/torus and the embedded unit vector on the sphere.
The zero potential is the empty sum; ``cosine`` is a single term and
``tabulated`` is an explicit list of terms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .manifold import Manifold, sphere_embed


@dataclass(frozen=True)
class Potential:
    amplitudes: Tuple[float, ...] = ()
    wavevectors: Tuple[Tuple[float, ...], ...] = ()
    phases: Tuple[float, ...] = ()

    def __post_init__(self):
        amps = tuple(float(a) for a in self.amplitudes)
        kv = tuple(tuple(float(c) for c in np.atleast_1d(k)) for k in self.wavevectors)
        ph = tuple(float(p) for p in self.phases) if self.phases else (0.0,) * len(amps)
        if not (len(amps) == len(kv) == len(ph)):
            raise ValueError("amplitudes, wavevectors and phases must have equal length")
        if len({len(k) for k in kv}) > 1:
            raise ValueError("all wavevectors must share one dimension")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "wavevectors", kv)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def zero(cls) -> "Potential":
        return cls()

    @classmethod
    def cosine(cls, amplitude: float = 1.0, wavevector=(1.0,), phase: float = 0.0) -> "Potential":
        return cls((amplitude,), (tuple(np.atleast_1d(wavevector)),), (phase,))

    @classmethod
    def tabulated(cls, terms: Sequence[dict]) -> "Potential":
        return cls(
            tuple(t["amplitude"] for t in terms),
            tuple(tuple(np.atleast_1d(t["wavevector"])) for t in terms),
            tuple(t.get("phase", 0.0) for t in terms),
        )

    @property
    def is_zero(self) -> bool:
        return all(a == 0.0 for a in self.amplitudes)

    @property
    def n_terms(self) -> int:
        return len(self.amplitudes)

    def arrays(self, m: Manifold):
        """``(amp, k, phase)`` arrays with ``k`` of shape ``(terms, d)``."""
        d = 3 if m.kind == "sphere" else m.dim
        if self.n_terms == 0:
            return np.zeros(0), np.zeros((0, d)), np.zeros(0)
        k = np.array(self.wavevectors, dtype=float)
        if k.shape[1] != d:
            raise ValueError(f"wavevectors must have dimension {d} on a {m.kind}")
        return np.array(self.amplitudes), k, np.array(self.phases)

    def __call__(self, m: Manifold, x) -> np.ndarray:
        """Value at chart point(s) ``x`` of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        amp, k, ph = self.arrays(m)
        z = sphere_embed(x) if m.kind == "sphere" else x
        if self.n_terms == 0:
            return np.zeros(z.shape[:-1])
        return np.cos(z @ k.T + ph) @ amp

    def sup_norm_bound(self) -> float:
        return float(np.sum(np.abs(self.amplitudes)))
