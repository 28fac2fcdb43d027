"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N] [--json out.json]``.
Each kernel is timed on the same inputs under both backends, outputs are
checked to agree, and the speedup of the compiled backend is reported.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from plateau import _kernels_py

try:
    from plateau import _kernels as _compiled
except ImportError:
    _compiled = None


def _soup(rng, count, d, n):
    V = rng.normal(size=(count * (d + 1), n))
    S = np.arange(count * (d + 1), dtype=np.intp).reshape(count, d + 1)
    return V, S


def cases(rng):
    """(name, args, comparison) for each kernel at a few sizes."""
    out = []
    for d, n, count in [(1, 2, 20000), (2, 3, 20000), (2, 4, 20000), (3, 4, 5000)]:
        V, S = _soup(rng, count, d, n)
        out.append((f"simplex_volumes d={d} n={n} S={count}", "simplex_volumes", (V, S)))
        out.append((f"mass_gradient   d={d} n={n} S={count}", "mass_gradient", (V, S)))
    for d, n, count in [(1, 3, 400), (2, 3, 400), (2, 4, 200)]:
        lower = np.zeros(n)
        upper = np.ones(n)
        pieces = rng.random((count, d + 1, n)) * 0.8 + 0.1
        c = np.full(n, 0.5) + rng.normal(scale=0.01, size=n)
        out.append((f"project_pieces  d={d} n={n} P={count}", "project_pieces", (pieces, c, lower, upper)))
    for k, n, pts, count in [(1, 3, 2000, 200), (2, 3, 2000, 200), (2, 4, 1000, 200)]:
        P = rng.normal(size=(pts, n))
        simp = rng.normal(size=(count, k + 1, n))
        out.append((f"distance        k={k} n={n} p={pts} m={count}", "distance_to_simplices", (P, simp)))
    return out


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, float):
        return abs(a - b) <= 1e-9 * max(1.0, abs(a))
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-12)


def run(repeat: int, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for label, name, args in cases(rng):
        py = getattr(_kernels_py, name)
        row = {"case": label}
        row["python_s"] = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        if _compiled is not None:
            cy = getattr(_compiled, name)
            row["compiled_s"] = min(timeit.repeat(lambda: cy(*args), number=1, repeat=repeat))
            row["speedup"] = row["python_s"] / row["compiled_s"]
            row["agree"] = _same(py(*args), cy(*args))
        rows.append(row)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="write the rows to this file")
    args = parser.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; timing the numpy fallback only", file=sys.stderr)
    rows = run(args.repeat, args.seed)
    print(f"{'case':46s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} agree")
    for r in rows:
        comp = f"{r['compiled_s']:13.5f} {r['speedup']:8.1f} {r['agree']}" if "compiled_s" in r else ""
        print(f"{r['case']:46s} {r['python_s']:11.5f} {comp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r.get("agree", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
