"""Explicit Lipschitz deformation maps packaged as composable moves.

Every move is a vectorized point map ``(m, n) -> (m, n)`` that is the
identity outside its support ball. Moves act on complexes vertex-wise after
refinement (see :func:`apply_move`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .geometry import Ball, Complex, Cube, Rectangle, refine, sphere_split

RADIAL_CONE = "radial_cone"
SQUEEZE = "squeeze"
PUNCTURE = "puncture"
GRID_PROJECTION = "grid_projection"
VERTEX_FIELD = "vertex_field"
COMPOSITE = "composite"
IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class DeformationMove:
    kind: str
    func: Callable[[np.ndarray], np.ndarray]
    support: Ball
    params: dict = field(default_factory=dict)
    lip_estimate: float | None = None
    factors: tuple = ()

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        out = self.func(np.atleast_2d(pts))
        return out[0] if single else out

    def with_lipschitz(self, value: float) -> "DeformationMove":
        return replace(self, lip_estimate=float(value))

    def to_json(self) -> dict:
        desc = {
            "kind": self.kind,
            "params": _jsonable(self.params),
            "support": {"center": self.support.center.tolist(), "radius": float(self.support.radius)},
        }
        if self.lip_estimate is not None:
            desc["lip_estimate"] = self.lip_estimate
        if self.factors:
            desc["factors"] = [f.to_json() for f in self.factors]
        return desc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _local(center, frame, n):
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    F = np.eye(n) if frame is None else np.asarray(frame, dtype=float)
    return c, F


def identity_move(n: int) -> DeformationMove:
    return DeformationMove(IDENTITY, lambda p: np.array(p, dtype=float), Ball(np.zeros(n), 1.0), {"n": n}, 1.0)


def radial_cone_map(x0, r: float, s: float) -> DeformationMove:
    """phi_s: collapse B(x0,(1-s)r) to x0, stretch the shell (1-s)r..r linearly onto 0..r."""
    if not 0 < s < 1:
        raise ValueError("need 0 < s < 1")
    x0 = np.asarray(x0, dtype=float)
    inner = (1 - s) * r

    def f(p):
        v = p - x0
        rho = np.linalg.norm(v, axis=1)
        out = p.copy()
        shell = (rho >= inner) & (rho < r)
        out[rho < inner] = x0
        scale = (rho[shell] - inner) / s / rho[shell]
        out[shell] = x0 + v[shell] * scale[:, None]
        return out

    return DeformationMove(RADIAL_CONE, f, Ball(x0, r), {"x0": x0, "r": r, "s": s})


def cutoff(t, r: float, eps: float):
    """Piecewise-linear g: 1 on [0, r(1-sqrt eps)/2], 0 from r/2 on; |g'| = 2/(r sqrt eps)."""
    a = r * (1 - math.sqrt(eps)) / 2
    return np.clip((r / 2 - np.asarray(t, dtype=float)) / (r / 2 - a), 0.0, 1.0)


def squeeze_map(r: float, eps: float, d: int, n: int, center=None, frame=None) -> DeformationMove:
    """The collapsing map P onto the plane x'' = 0, in max-norm coordinates.

    ``frame`` is an orthonormal (n, n) matrix whose first d rows span the
    plane. Inside max(|x'|, |x''|) <= r/2 the transverse part is contracted
    by (|x''| - 3 eps r)_+ / (1 - 6 eps), blended with the identity by g(|x'|).
    """
    if not 0 < eps < 1 / 6:
        raise ValueError("need 0 < eps < 1/6")
    c, F = _local(center, frame, n)

    def f(p):
        z = (p - c) @ F.T
        xp, xpp = z[:, :d], z[:, d:]
        np_ = np.abs(xp).max(axis=1) if d else np.zeros(len(z))
        npp = np.abs(xpp).max(axis=1)
        inside = np.maximum(np_, npp) <= r / 2
        g = cutoff(np_, r, eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(npp > 0, np.maximum(npp - 3 * eps * r, 0.0) / (1 - 6 * eps) / npp, 0.0)
        new_pp = (g * factor + (1 - g))[:, None] * xpp
        out = p.copy()
        zi = z[inside]
        zi[:, d:] = new_pp[inside]
        out[inside] = zi @ F + c
        return out

    return DeformationMove(SQUEEZE, f, Ball(c, r * math.sqrt(n) / 2),
                           {"r": r, "eps": eps, "d": d, "n": n, "center": c, "frame": F})


def puncture_projection(y_prime, delta: float, r: float, d: int, n: int, side: float | None = None,
                        center=None, frame=None) -> DeformationMove:
    """phi_j: push the plane part of R_{side, r} away from y' onto the boundary of Q^d_side.

    A point (x', x'') moves to (x' + z', x'') with
    z' = min(1, |x'-y'|/delta) * (r - 4|x''|)_+ / r * gamma (x' - y'), where
    gamma puts x' + gamma (x' - y') on the boundary of the core square.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    side = r if side is None else side
    y_prime = np.asarray(y_prime, dtype=float)
    c, F = _local(center, frame, n)

    def f(p):
        z = (p - c) @ F.T
        xp, xpp = z[:, :d], z[:, d:]
        npp = np.abs(xpp).max(axis=1) if n > d else np.zeros(len(z))
        inside = (np.abs(xp).max(axis=1) <= side / 2) & (npp <= r / 2)
        u = xp - y_prime
        dist = np.linalg.norm(u, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            bound = np.where(u > 0, side / 2 - xp, np.where(u < 0, -side / 2 - xp, np.inf))
            gam = np.where(u != 0, bound / u, np.inf).min(axis=1)
        gam = np.where(np.isfinite(gam), np.maximum(gam, 0.0), 0.0)
        w = np.minimum(1.0, dist / delta) * np.maximum(r - 4 * npp, 0.0) / r * gam
        out = p.copy()
        zi = z[inside]
        zi[:, :d] = (xp + w[:, None] * u)[inside]
        out[inside] = zi @ F + c
        return out

    return DeformationMove(PUNCTURE, f, Ball(c, r * math.sqrt(n) / 2),
                           {"y_prime": y_prime, "delta": delta, "r": r, "side": side, "d": d, "n": n,
                            "center": c, "frame": F})


def bump_field(center, radius: float, vector) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth compactly supported field vector * (1 - |x-c|^2/R^2)^3."""
    center = np.asarray(center, dtype=float)
    vector = np.asarray(vector, dtype=float)

    def X(p):
        s2 = np.sum((p - center) ** 2, axis=1) / radius**2
        w = np.where(s2 < 1, (1 - s2) ** 3, 0.0)
        return w[:, None] * vector

    return X


def vertex_field_move(X: Callable[[np.ndarray], np.ndarray], t: float, support: Ball,
                      params: dict | None = None) -> DeformationMove:
    """phi_t = Id + t X for a field X vanishing outside ``support``."""
    return DeformationMove(VERTEX_FIELD, lambda p: p + t * X(p), support, dict(params or {}, t=t))


def displacement_move(K: Complex, displacement: np.ndarray, params: dict | None = None) -> DeformationMove:
    """Vertex-wise displacement of K, as a move acting on K's vertex table.

    Only meaningful for complexes sharing K's vertex table; points that are
    not vertices of K are left fixed.
    """
    disp = np.asarray(displacement, dtype=float)
    moved = np.linalg.norm(disp, axis=1) > 0
    if moved.any():
        pts = K.vertices[moved]
        c = pts.mean(axis=0)
        rad = float(np.linalg.norm(pts - c, axis=1).max()) + 1e-12
    else:
        c, rad = np.zeros(K.ambient), 1.0
    lookup = {tuple(v): i for i, v in enumerate(K.vertices.tolist())}

    def f(p):
        out = p.copy()
        for row, q in enumerate(p.tolist()):
            i = lookup.get(tuple(q))
            if i is not None:
                out[row] += disp[i]
        return out

    return DeformationMove(VERTEX_FIELD, f, Ball(c, rad), dict(params or {}, vertex_wise=True))


def compose(*moves: DeformationMove) -> DeformationMove:
    """Apply ``moves`` left to right; the support is a ball enclosing all supports."""
    moves = tuple(moves)
    c = moves[0].support.center
    rad = max(float(np.linalg.norm(m.support.center - c)) + m.support.radius for m in moves)

    def f(p):
        for m in moves:
            p = m.func(p)
        return p

    lip = None
    if all(m.lip_estimate is not None for m in moves):
        lip = float(np.prod([m.lip_estimate for m in moves]))
    return DeformationMove(COMPOSITE, f, Ball(c, rad), {"count": len(moves)}, lip, moves)


def apply_move(K: Complex, m: DeformationMove, h: float) -> Complex:
    """Refine K to edge length h, then push every vertex through the move."""
    R = refine(K, h)
    if R.is_empty:
        return R
    return R.with_vertices(m(R.vertices))


def lipschitz_estimate(m: DeformationMove, region, n_samples: int = 100_000, seed: int = 0) -> float:
    """Max of |m(a) - m(b)| / |a - b| over sampled pairs in ``region``.

    Half of the pairs are independent uniform points, half are
    perturbations of size 1e-6 * diam along random directions.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    lo, hi = _box(region)
    n = len(lo)
    diam = float(np.linalg.norm(hi - lo))
    best = 0.0
    chunk = 20_000
    remaining = n_samples
    while remaining > 0:
        k = min(chunk, remaining)
        remaining -= k
        k_far = k // 2
        k_near = k - k_far
        a = rng.uniform(lo, hi, size=(k_far, n))
        b = rng.uniform(lo, hi, size=(k_far, n))
        p = rng.uniform(lo, hi, size=(k_near, n))
        u = rng.normal(size=(k_near, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        q = p + 1e-6 * diam * u
        A = np.concatenate([a, p])
        B = np.concatenate([b, q])
        num = np.linalg.norm(m(A) - m(B), axis=1)
        den = np.linalg.norm(A - B, axis=1)
        ok = den > 0
        if ok.any():
            best = max(best, float((num[ok] / den[ok]).max()))
    return best


def _box(region):
    if isinstance(region, (Cube, Rectangle)):
        c = region.center
        hw = region.half_widths
        return c - hw, c + hw
    lo, hi = region
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


# -- cone competitor --------------------------------------------------------


@dataclass
class ConeParts:
    outside: Complex
    cone: Complex
    slice: Complex


def cone_parts(K: Complex, ball: Ball) -> ConeParts:
    """Split K at the sphere and build the cone from the center over K ∩ ∂B."""
    sp = sphere_split(K, ball)
    verts = np.concatenate([sp.vertices, ball.center[None, :]])
    apex = len(verts) - 1
    slc = np.asarray(sp.slice, dtype=np.intp).reshape(-1, K.dim)
    cone = np.concatenate([np.full((len(slc), 1), apex, dtype=np.intp), slc], axis=1)
    mk = lambda s, dd: Complex(dd, K.ambient, verts, np.asarray(s, dtype=np.intp).reshape(-1, dd + 1),
                               K.multiplicity_mode)
    return ConeParts(mk(sp.outside, K.dim), mk(cone, K.dim), mk(slc, K.dim - 1))


def cone_competitor(K: Complex, ball: Ball) -> Complex:
    """(K minus B) united with the cone over K ∩ ∂B with apex at the center."""
    parts = cone_parts(K, ball)
    S = np.concatenate([parts.outside.simplices, parts.cone.simplices])
    return parts.outside.replace(simplices=S).compact()


def move_from_json(desc: dict) -> DeformationMove:
    """Rebuild an analytic move from its JSON descriptor."""
    kind = desc["kind"]
    p = desc["params"]
    if kind == RADIAL_CONE:
        return radial_cone_map(p["x0"], p["r"], p["s"])
    if kind == SQUEEZE:
        return squeeze_map(p["r"], p["eps"], p["d"], p["n"], p["center"], p["frame"])
    if kind == PUNCTURE:
        return puncture_projection(p["y_prime"], p["delta"], p["r"], p["d"], p["n"], p["side"],
                                   p["center"], p["frame"])
    if kind == IDENTITY:
        return identity_move(p["n"])
    if kind == COMPOSITE:
        return compose(*(move_from_json(f) for f in desc["factors"]))
    raise ValueError(f"move kind {kind!r} is data-dependent and cannot be rebuilt from JSON")
