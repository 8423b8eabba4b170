#!/usr/bin/env python3
"""Shooting throughput: compiled extension vs the numpy fallback.

Times ``shoot_charted`` on a batch of random pairs per manifold and prints
pairs per second for each backend, plus the largest disagreement between
them.  Usage::

    python benchmarks/bench_backends.py [--pairs 2000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from feynslice import _backend
from feynslice.dynamics import default_mu, prepare_pairs, shoot_charted
from feynslice.manifold import Circle, FlatTorus, RoundSphere
from feynslice.potential import Potential


def pairs(m, n, rng):
    if m.kind == "sphere":
        z = rng.uniform(-0.8, 0.8, (2, 4 * n))
        ph = rng.uniform(0, 2 * np.pi, (2, 4 * n))
        X = np.stack([np.arccos(z[0]), ph[0]], -1)
        Y = np.stack([np.arccos(z[1]), ph[1]], -1)
        keep = m.geodesic_distance(X, Y) < 2.5
        return X[keep][:n], Y[keep][:n]
    Y = rng.uniform(0, 2 * np.pi, (n, m.dim))
    return Y + rng.uniform(-1.5, 1.5, (n, m.dim)), Y


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--t", type=float, default=0.3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = [
        ("circle, cos x", Circle(), Potential.cosine(1.0, (1.0,))),
        ("torus, cosine", FlatTorus(), Potential.cosine(0.5, (1.0, 1.0))),
        ("sphere, V = 0", RoundSphere(), Potential.zero()),
        ("sphere, cosine", RoundSphere(), Potential.cosine(0.5, (0.0, 0.0, 1.0))),
    ]
    names = _backend.available()
    print(f"backends: {', '.join(names)}; {args.pairs} pairs, best of {args.repeat}")
    print(f"{'case':<16}" + "".join(f"{n + ' pairs/s':>20}" for n in names) + f"{'speedup':>10}{'max diff':>11}")
    for label, m, V in cases:
        X, Y = pairs(m, args.pairs, rng)
        xc, yc, Q = prepare_pairs(m, X, Y)
        rate, res = {}, {}
        for n in names:
            dt, res[n] = best_of(
                lambda: shoot_charted(m, V, args.t, xc, yc, Q, mu=default_mu(m), backend=n), args.repeat)
            rate[n] = len(X) / dt
        line = f"{label:<16}" + "".join(f"{rate[n]:>20.0f}" for n in names)
        if len(names) == 2:
            diff = max(np.max(np.abs(res["compiled"][k] - res["python"][k])) for k in ("eta", "phi", "jac_x_eta"))
            line += f"{rate['compiled'] / rate['python']:>9.1f}x{diff:>11.1e}"
        print(line)


if __name__ == "__main__":
    main()
