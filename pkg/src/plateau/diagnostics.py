"""Empirical certificates on computed complexes.

Density ratios, monotonicity profiles, unit density at regular points,
stationarity under compactly supported perturbations, and density-based
flagging of singular points with a box-counting dimension estimate. Every
sampled radius stays below the distance of its point to the boundary H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .deform import bump_field
from .errors import RadiusNotGeneric
from .geometry import Ball, Complex, _local_refine, _near_ball, check_generic, mass, sphere_split
from .spanning import SpanningSpec

DENSITY_LOWER_BOUND = "density_lower_bound"
MONOTONICITY = "monotonicity"
UNIT_DENSITY = "unit_density"
STATIONARITY = "stationarity"
SINGULAR_SET = "singular_set"

MONO_TOL = 1e-2
UNIT_TOL = 0.05
SINGULAR_TOL = 0.2


def omega(d: int) -> float:
    """Volume of the unit ball of R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def dist_to_H(points, spec: SpanningSpec | None) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if spec is None or spec.H.is_empty:
        return np.full(len(points), np.inf)
    return kernels.distance_to_simplices(points, spec.H.points())


@dataclass
class Certificate:
    kind: str
    samples: list = field(default_factory=list)  # (point, radius, value)
    passed: bool = True
    threshold: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "threshold": self.threshold,
            "samples": [{"point": [float(v) for v in p], "radius": float(r), "value": _num(v)}
                        for p, r, v in self.samples],
            "details": {k: _num(v) for k, v in self.details.items()},
        }


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# density


def density(K: Complex, x, r: float, spec: SpanningSpec | None = None, local_h: float | None = None) -> float:
    """mass(K ∩ B(x, r)) / (omega_d r^d).

    Simplices crossing the sphere are bisected to edge ``local_h`` so the
    polygonal cut follows the sphere. The default r/(16 sqrt 5) is an
    irrational multiple of r, so the refinement threshold never coincides
    with dyadic mesh edge lengths and the result is exactly scale covariant.
    Raises RadiusNotGeneric when a vertex of the refined complex lies on
    the sphere.
    """
    x = np.asarray(x, dtype=float)
    if r <= 0:
        raise ValueError("radius must be positive")
    if spec is not None and not r < float(dist_to_H(x, spec)[0]):
        raise ValueError(f"radius {r:.6g} reaches the boundary H")
    if K.is_empty:
        return 0.0
    ball = Ball(x, r)
    sub = K.subset(_near_ball(K, ball))
    if sub.is_empty:
        return 0.0
    if K.dim >= 1:
        sub = _local_refine(sub, ball, r / (16 * math.sqrt(5)) if local_h is None else local_h)
    if sub.is_empty:
        return 0.0
    check_generic(sub, ball)
    inside = sphere_split(sub, ball).part("inside")
    return mass(inside) / (omega(K.dim) * r ** K.dim)


def _generic_density(K, x, r, spec, local_h=None):
    """Density at the first radius in r, r(1 - 1e-7), r(1 - 2e-7), ... that is generic."""
    for k in range(16):
        rk = r * (1 - 1e-7 * k)
        try:
            return density(K, x, rk, spec, local_h), rk
        except RadiusNotGeneric:
            continue
    raise RadiusNotGeneric(f"no generic radius near {r}")


def sample_points(K: Complex, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points of K drawn uniformly with respect to d-mass."""
    vols = kernels.simplex_volumes(K.vertices, K.simplices)
    if vols.sum() <= 0:
        return np.zeros((0, K.ambient))
    idx = rng.choice(len(vols), size=count, p=vols / vols.sum())
    w = rng.dirichlet(np.ones(K.dim + 1), size=count)
    return np.einsum("pk,pkn->pn", w, K.points()[idx])


# ---------------------------------------------------------------------------
# monotonicity


@dataclass
class Profile:
    point: np.ndarray
    radii: list
    densities: list
    passed: bool
    worst_drop: float


def monotonicity_profile(K: Complex, x, radii, spec: SpanningSpec | None = None,
                         mono_tol: float = MONO_TOL) -> Profile:
    """Density at increasing radii; passes when no step drops by more than mono_tol."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    x = np.asarray(x, dtype=float)
    vals = [density(K, x, r, spec) for r in radii]
    drops = [a - b for a, b in zip(vals, vals[1:])]
    worst = max(drops, default=0.0)
    return Profile(x, radii, vals, worst <= mono_tol, worst)


def dyadic_radii(r_max: float, count: int = 8) -> list[float]:
    return [r_max / 2 ** k for k in range(count - 1, -1, -1)]


def monotonicity_certificate(K: Complex, spec: SpanningSpec | None, points: int = 10, count: int = 8,
                             seed: int = 0, mono_tol: float = MONO_TOL, reach: float = 0.9,
                             r_cap: float | None = None) -> Certificate:
    """Profiles over ``count`` dyadic radii below ``reach * dist(x, H)`` at random points of K."""
    rng = np.random.default_rng(seed)
    cert = Certificate(MONOTONICITY, threshold=mono_tol)
    cap = r_cap if r_cap is not None else K.diameter()
    pts = sample_points(K, 50 * points, rng)
    dH = dist_to_H(pts, spec)
    ok = np.flatnonzero(dH > 1e-3 * cap)
    worst = 0.0
    for i in ok[:points]:
        r_max = min(reach * float(dH[i]), cap)
        radii = [r * (1 - 1e-7 * k) for k, r in enumerate(dyadic_radii(r_max, count))]
        prof = monotonicity_profile(K, pts[i], radii, spec, mono_tol)
        worst = max(worst, prof.worst_drop)
        cert.samples.extend((pts[i], r, v) for r, v in zip(prof.radii, prof.densities))
        cert.passed &= prof.passed
    cert.details = {"points": int(min(points, len(ok))), "worst_drop": worst}
    if len(ok) == 0:
        cert.passed = False
    return cert


# ---------------------------------------------------------------------------
# singular points


@dataclass
class SingularReport:
    points: np.ndarray
    densities: np.ndarray
    dimension: float
    flagged: int
    counts: list

    def certificate(self, d: int, r_min: float) -> Certificate:
        cert = Certificate(SINGULAR_SET, threshold=d - 1)
        cert.samples = [(p, r_min, float(v)) for p, v in zip(self.points, self.densities)]
        cert.passed = len(self.points) == 0 or self.dimension <= d - 1 + 0.25
        cert.details = {"candidates": len(self.points), "dimension": self.dimension,
                        "box_counts": self.counts, "flagged_vertices": self.flagged}
        return cert


def box_dimension(points: np.ndarray, scales) -> tuple[float, list]:
    """Least-squares slope of log N(s) against log(1/s), N = occupied boxes of side s."""
    if len(points) == 0:
        return 0.0, [0 for _ in scales]
    counts = [len({tuple(np.floor(p / s).astype(np.int64)) for p in points}) for s in scales]
    if len(scales) < 2:
        return 0.0, counts
    slope = np.polyfit(np.log(1.0 / np.asarray(scales)), np.log(counts), 1)[0]
    return round(float(max(slope, 0.0)), 12), counts


def singular_candidates(K: Complex, tol: float = SINGULAR_TOL, r_min: float = 0.05,
                        spec: SpanningSpec | None = None) -> SingularReport:
    """Vertices with density(., r_min) >= 1 + tol, merged into clusters of diameter scale r_min.

    Each cluster is represented by its point of largest density. The
    dimension of the flagged vertex set is estimated by box counting at the
    scales 4 r_min, 2 r_min and r_min.
    """
    used = np.unique(K.simplices)
    V = K.vertices[used]
    dH = dist_to_H(V, spec)
    vals = np.full(len(V), np.nan)
    for i in np.flatnonzero(dH > r_min):
        vals[i] = _generic_density(K, V[i], r_min, spec)[0]
    flagged = np.flatnonzero(vals >= 1 + tol)
    P = V[flagged]
    D = vals[flagged]
    # single-linkage clusters at distance r_min, represented by the densest point
    label = -np.ones(len(P), dtype=int)
    reps, rep_vals = [], []
    for start in np.argsort(-D):
        if label[start] >= 0:
            continue
        cid = len(reps)
        stack = [start]
        label[start] = cid
        while stack:
            j = stack.pop()
            near = np.flatnonzero((label < 0) & (np.linalg.norm(P - P[j], axis=1) <= r_min))
            label[near] = cid
            stack.extend(near.tolist())
        reps.append(P[start])
        rep_vals.append(D[start])
    dim, counts = box_dimension(P, [4 * r_min, 2 * r_min, r_min])
    return SingularReport(np.array(reps).reshape(-1, K.ambient), np.array(rep_vals), dim, len(P), counts)


# ---------------------------------------------------------------------------
# unit density


def unit_density_check(K: Complex, sample_count: int = 100, r_min: float = 0.05, seed: int = 0,
                       spec: SpanningSpec | None = None, exclude: np.ndarray | None = None,
                       tol: float = UNIT_TOL, required: float = 0.95) -> Certificate:
    """Density at r_min within 1 +- tol at sampled regular points of K.

    Points closer than r_min to H or than 2 r_min to an excluded (singular)
    point are skipped; the certificate passes when at least ``required`` of
    the sampled points are within tolerance.
    """
    rng = np.random.default_rng(seed)
    cert = Certificate(UNIT_DENSITY, threshold=tol)
    pts = sample_points(K, 20 * sample_count, rng)
    keep = dist_to_H(pts, spec) > r_min
    if exclude is not None and len(exclude):
        dist = np.min(np.linalg.norm(pts[:, None] - np.asarray(exclude)[None], axis=2), axis=1)
        keep &= dist > 2 * r_min
    pts = pts[keep][:sample_count]
    good = 0
    for p in pts:
        v, r = _generic_density(K, p, r_min, spec)
        cert.samples.append((p, r, v))
        good += abs(v - 1.0) <= tol
    frac = good / len(pts) if len(pts) else 0.0
    cert.passed = len(pts) > 0 and frac >= required
    cert.details = {"sampled": len(pts), "fraction_within": frac, "required": required}
    return cert


# ---------------------------------------------------------------------------
# lower density bound and stationarity


def density_lower_bound(K: Complex, spec: SpanningSpec | None = None, sample_count: int = 20,
                        count: int = 4, seed: int = 0, floor: float = 0.5) -> Certificate:
    """Empirical minimum density over random points and dyadic radii below dist(x, H).

    No universal constant is known, so the verdict compares against ``floor``.
    """
    rng = np.random.default_rng(seed)
    cert = Certificate(DENSITY_LOWER_BOUND, threshold=floor)
    pts = sample_points(K, 20 * sample_count, rng)
    dH = dist_to_H(pts, spec)
    cap = K.diameter()
    ok = np.flatnonzero(dH > 1e-3 * cap)[:sample_count]
    lowest = math.inf
    for i in ok:
        r_max = min(0.9 * float(dH[i]), cap)
        for r in dyadic_radii(r_max, count):
            v, rr = _generic_density(K, pts[i], r, spec)
            cert.samples.append((pts[i], rr, v))
            lowest = min(lowest, v)
    cert.passed = bool(len(ok)) and lowest >= floor
    cert.details = {"minimum": lowest if math.isfinite(lowest) else None}
    return cert


def stationarity_check(K: Complex, spec: SpanningSpec | None = None, n_fields: int = 20,
                       ts=(1e-3, 1e-4), seed: int = 0, slack: float = 1e-3) -> Certificate:
    """mass(K + t X) >= mass(K) - slack * t for random bump fields X supported off H.

    Each bump is centred at a random vertex of K off H, so every field
    moves at least that vertex.
    """
    rng = np.random.default_rng(seed)
    cert = Certificate(STATIONARITY, threshold=slack)
    m0 = mass(K)
    pts = K.vertices[np.unique(K.simplices)]
    dH = dist_to_H(pts, spec)
    cap = 0.25 * K.diameter()
    free = np.flatnonzero(dH > 1e-3 * K.diameter())
    ok = rng.choice(free, size=min(n_fields, len(free)), replace=False) if len(free) else free
    worst = math.inf
    for i in ok:
        radius = min(0.9 * float(dH[i]), cap)
        v = rng.normal(size=K.ambient)
        v /= np.linalg.norm(v)
        X = bump_field(pts[i], radius, v)
        disp = X(K.vertices)
        for t in ts:
            m1 = mass(K.with_vertices(K.vertices + t * disp))
            rate = (m1 - m0) / t
            cert.samples.append((pts[i], radius, rate))
            worst = min(worst, rate)
            cert.passed &= m1 >= m0 - slack * t
    if not len(ok):
        cert.passed = False
    cert.details = {"fields": int(len(ok)), "worst_rate": worst if math.isfinite(worst) else None}
    return cert


def audit(K: Complex, spec: SpanningSpec | None = None, seed: int = 0, r_min: float | None = None,
          samples: int = 50) -> list[Certificate]:
    """All certificates for one complex."""
    if r_min is None:
        r_min = 0.05 * K.diameter()
    sing = singular_candidates(K, SINGULAR_TOL, r_min, spec)
    return [
        density_lower_bound(K, spec, seed=seed),
        monotonicity_certificate(K, spec, seed=seed),
        unit_density_check(K, samples, r_min, seed, spec, exclude=sing.points),
        stationarity_check(K, spec, seed=seed),
        sing.certificate(K.dim, r_min),
    ]
