"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The three solves (Steiner tree, disk in R^3, disk in R^4) are shared by
several criteria and run once per session.
"""
import math
import time

import numpy as np
import pytest

from plateau import diagnostics as D
from plateau import minimize as M
from plateau.deform import cone_parts, lipschitz_estimate, squeeze_map
from plateau.geometry import Ball, Complex, Cube, mass
from plateau.grid import build_grid, check_properties, deform, random_patch
from plateau.shapes import disk
from plateau.spanning import spans

SQRT3 = math.sqrt(3)


class Solve:
    def __init__(self, name: str, h: float, seed: int = 0):
        self.problem = M.make_problem(name, h, seed)
        start = time.perf_counter()
        self.trace = M.descend(self.problem, seed=seed, keep_complexes=True)
        self.seconds = time.perf_counter() - start
        self.K = self.trace.final
        self.mass = mass(self.K)


_SOLVES: dict = {}


def solved(name: str) -> Solve:
    if name not in _SOLVES:
        _SOLVES[name] = Solve(name, 0.05)
    return _SOLVES[name]


# ---------------------------------------------------------------------------


def test_criterion_1_steiner(criterion):
    s = solved("steiner")
    start = time.perf_counter()
    sing = D.singular_candidates(s.K, D.SINGULAR_TOL, r_min=0.05, spec=s.problem.spec)
    seconds = s.seconds + time.perf_counter() - start
    rel = abs(s.mass - SQRT3) / SQRT3
    one = len(sing.points) == 1
    dens = float(sing.densities[0]) if one else float("nan")
    ok = rel <= 1e-2 and one and abs(dens - 1.5) <= 0.05 and sing.dimension == 0.0 and seconds < 30
    criterion(1, ok, f"mass {s.mass:.10f} (rel err {rel:.2e}), candidates {len(sing.points)}, "
                     f"density {dens:.6f}, dimension {sing.dimension:g}, {seconds:.1f} s")
    assert ok


def test_criterion_2_disk(criterion):
    s = solved("disk")
    start = time.perf_counter()
    sing = D.singular_candidates(s.K, D.SINGULAR_TOL, r_min=0.05, spec=s.problem.spec)
    cert = D.unit_density_check(s.K, 100, 0.05, seed=0, spec=s.problem.spec, exclude=sing.points)
    seconds = s.seconds + time.perf_counter() - start
    rel = abs(s.mass - math.pi) / math.pi
    frac = cert.details["fraction_within"]
    ok = rel <= 2e-2 and cert.passed and seconds < 120
    criterion(2, ok, f"mass {s.mass:.10f} (rel err {rel:.2e}), unit density at {frac:.0%} of "
                     f"{cert.details['sampled']} points, {seconds:.1f} s")
    assert ok


def test_criterion_3_codimension_two(criterion):
    s4 = solved("disk4")
    s3 = solved("disk")
    stat = D.stationarity_check(s4.K, s4.problem.spec, n_fields=20, ts=(1e-3, 1e-4), slack=1e-3)
    rel = abs(s4.mass - math.pi) / math.pi
    gap = abs(s4.mass - s3.mass) / s3.mass
    ok = rel <= 3e-2 and stat.passed and gap <= 1e-2
    criterion(3, ok, f"mass {s4.mass:.10f} (rel err {rel:.2e}), n=3 answer {s3.mass:.10f} "
                     f"(gap {gap:.1e}), stationarity {stat.verdict}")
    assert ok


PAIRS = [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2)]
FRACTIONS = (1 / 8, 1 / 16, 1 / 32)


def test_criterion_4_deformation_properties(criterion):
    start = time.perf_counter()
    failures, lines, stable = [], [], True
    for n, d in PAIRS:
        rng = np.random.default_rng(1000 * n + d)
        complexes = [random_patch(n, d, rng) for _ in range(20)]
        worst = {}
        for f in FRACTIONS:
            g = build_grid(Cube(np.zeros(n), 1.0), f)
            ratios = []
            for t, K in enumerate(complexes):
                res = deform(K, g, seed=t)
                rep = check_properties(K, res, np.random.default_rng(t))
                failures.extend(f"n={n} d={d} eps=l*{f:g} #{t}: {x}" for x in rep.failures)
                ratios.append(res.projection_k1)
            worst[f] = max(ratios)
        vals = list(worst.values())
        var = (max(vals) - min(vals)) / min(vals)
        stable &= var < 0.05
        lines.append(f"(n={n},d={d}) k1 " + "/".join(f"{v:.3f}" for v in vals) + f" var {var:.1%}")
    seconds = time.perf_counter() - start
    ok = not failures and stable and seconds < 300
    criterion(4, ok, f"100 complexes, property failures {len(failures)}, " + "; ".join(lines)
              + f", {seconds:.0f} s")
    assert not failures, failures[:5]
    assert stable, lines
    assert seconds < 300


def test_criterion_5_cone_convergence(criterion):
    r, d = 1.0, 2
    hs = np.array([0.2, 0.1, 0.05])
    errs = []
    for h in hs:
        K = disk(h, 3)
        K = K.with_vertices(K.vertices * 1.5)
        parts = cone_parts(K, Ball(np.zeros(3), r + 1e-7))
        errs.append(abs(mass(parts.cone) - (r / d) * mass(parts.slice)))
    errs = np.array(errs)
    c = float(np.max(errs / hs))
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = slope >= 1.0 and bool(np.all(errs <= c * hs))
    criterion(5, ok, "errors " + ", ".join(f"{e:.2e}" for e in errs) + f", c = {c:.3e}, order {slope:.2f}")
    assert ok


def test_criterion_6_monotonicity(criterion):
    parts, ok = [], True
    for name in ("steiner", "disk"):
        s = solved(name)
        cert = D.monotonicity_certificate(s.K, s.problem.spec, points=10, count=8, seed=0, mono_tol=1e-2)
        ok &= cert.passed and cert.details["points"] == 10
        parts.append(f"{name} worst drop {cert.details['worst_drop']:.2e}")
    criterion(6, ok, ", ".join(parts))
    assert ok


def _fd_gradient(K, step=1e-6):
    V = K.vertices.copy()
    g = np.zeros_like(V)
    for i in range(V.shape[0]):
        for j in range(V.shape[1]):
            V[i, j] += step
            up = mass(K.with_vertices(V))
            V[i, j] -= 2 * step
            down = mass(K.with_vertices(V))
            V[i, j] += step
            g[i, j] = (up - down) / (2 * step)
    return g


def test_criterion_7_first_variation(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(d, 6))
        count = int(rng.integers(2, 8))
        K = Complex(d, n, rng.normal(size=(count * (d + 1), n)), np.arange(count * (d + 1)).reshape(count, d + 1))
        g = M.first_variation(K).field
        fd = _fd_gradient(K)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    stat_ok, parts = True, []
    for name in ("steiner", "disk", "disk4"):
        s = solved(name)
        cert = D.stationarity_check(s.K, s.problem.spec, n_fields=20, ts=(1e-3,), slack=1e-3)
        stat_ok &= cert.passed and cert.details["fields"] == 20
        parts.append(f"{name} worst rate {cert.details['worst_rate']:.2e}")
    ok = worst <= 1e-5 and stat_ok
    criterion(7, ok, f"max relative gradient error {worst:.2e} over 50 complexes; " + ", ".join(parts))
    assert ok


def test_criterion_8_spanning_preserved(criterion):
    total, bad = 0, 0
    for name in ("steiner", "disk", "disk4"):
        s = solved(name)
        for K in s.trace.complexes:
            total += 1
            bad += not spans(K, s.problem.spec).ok
    ok = total > 0 and bad == 0
    criterion(8, ok, f"{total - bad} of {total} accepted iterates span")
    assert ok


def test_criterion_9_squeeze_lipschitz(criterion):
    ok, parts = True, []
    for n in (3, 4):
        ratios = []
        for eps in (1e-2, 1e-4):
            L = lipschitz_estimate(squeeze_map(1.0, eps, 2, n), Cube(np.zeros(n), 1.0), 400_000, seed=0)
            ratios.append((L - 1) / math.sqrt(eps))
        factor = max(ratios) / min(ratios)
        ok &= min(ratios) > 0 and factor <= 2.0
        parts.append(f"n={n} (L-1)/sqrt(eps) {ratios[0]:.3f} and {ratios[1]:.3f} (factor {factor:.2f})")
    criterion(9, ok, ", ".join(parts))
    assert ok
