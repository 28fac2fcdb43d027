"""Embedded simplicial complexes: volumes, mass, slicing and refinement."""
from __future__ import annotations

import math
from itertools import combinations
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import RadiusNotGeneric

MASS = "mass"
OCCUPANCY = "occupancy"

# radius genericity: |dist - r| must exceed SPHERE_TOL * r
SPHERE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Complex:
    """A d-dimensional simplicial complex embedded in R^n.

    Instances are treated as immutable values; arrays are made read-only.
    """

    dim: int
    ambient: int
    vertices: np.ndarray
    simplices: np.ndarray
    multiplicity_mode: str = MASS

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, self.ambient)
        s = np.array(self.simplices, dtype=np.intp).reshape(-1, self.dim + 1)
        if not 0 <= self.dim <= self.ambient:
            raise ValueError(f"need 0 <= d <= n, got d={self.dim}, n={self.ambient}")
        if s.size and (s.min() < 0 or s.max() >= len(v)):
            raise ValueError("simplex index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinates")
        if self.multiplicity_mode not in (MASS, OCCUPANCY):
            raise ValueError(f"unknown multiplicity mode {self.multiplicity_mode!r}")
        v.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "simplices", s)

    @classmethod
    def empty(cls, dim: int, ambient: int, mode: str = MASS) -> "Complex":
        return cls(dim, ambient, np.zeros((0, ambient)), np.zeros((0, dim + 1), dtype=np.intp), mode)

    def __len__(self) -> int:
        return len(self.simplices)

    @property
    def is_empty(self) -> bool:
        return len(self.simplices) == 0

    def replace(self, vertices=None, simplices=None, mode=None) -> "Complex":
        return Complex(
            self.dim,
            self.ambient,
            self.vertices if vertices is None else vertices,
            self.simplices if simplices is None else simplices,
            self.multiplicity_mode if mode is None else mode,
        )

    def with_vertices(self, vertices: np.ndarray) -> "Complex":
        return self.replace(vertices=vertices)

    def compact(self) -> "Complex":
        """Drop vertices not referenced by any simplex."""
        used = np.unique(self.simplices)
        if len(used) == len(self.vertices):
            return self
        remap = np.full(len(self.vertices), -1, dtype=np.intp)
        remap[used] = np.arange(len(used))
        return self.replace(vertices=self.vertices[used], simplices=remap[self.simplices])

    def subset(self, mask) -> "Complex":
        return self.replace(simplices=self.simplices[np.asarray(mask)]).compact()

    def merge_vertices(self) -> "Complex":
        """Identify vertices with bit-identical coordinates."""
        if len(self.vertices) == 0:
            return self
        uniq, inverse = np.unique(self.vertices, axis=0, return_inverse=True)
        if len(uniq) == len(self.vertices):
            return self
        # keep first-occurrence order for determinism
        first = np.full(len(uniq), len(self.vertices), dtype=np.intp)
        np.minimum.at(first, inverse.ravel(), np.arange(len(self.vertices)))
        order = np.argsort(first)
        rank = np.empty(len(uniq), dtype=np.intp)
        rank[order] = np.arange(len(uniq))
        return self.replace(vertices=uniq[order], simplices=rank[inverse.ravel()][self.simplices])

    def drop_degenerate(self) -> "Complex":
        if self.dim == 0 or self.is_empty:
            return self
        keep = kernels.simplex_volumes(self.vertices, self.simplices) > 0
        if keep.all():
            return self
        return self.subset(keep)

    def edges(self) -> np.ndarray:
        """Unique sorted vertex pairs (E, 2)."""
        k = self.dim + 1
        if self.is_empty or k < 2:
            return np.zeros((0, 2), dtype=np.intp)
        pairs = [self.simplices[:, [i, j]] for i in range(k) for j in range(i + 1, k)]
        e = np.sort(np.concatenate(pairs), axis=1)
        return np.unique(e, axis=0)

    def max_edge(self) -> float:
        e = self.edges()
        if len(e) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).max())

    def diameter(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def points(self) -> np.ndarray:
        """Vertex coordinates per simplex, shape (S, d+1, n)."""
        return self.vertices[self.simplices]


def union(*parts: Complex) -> Complex:
    """Concatenate complexes of equal dimension (no vertex merging)."""
    parts = [p for p in parts if p is not None]
    base = parts[0]
    verts, simps, offset = [], [], 0
    for p in parts:
        if p.dim != base.dim or p.ambient != base.ambient:
            raise ValueError("dimension mismatch in union")
        verts.append(p.vertices)
        simps.append(p.simplices + offset)
        offset += len(p.vertices)
    return base.replace(vertices=np.concatenate(verts), simplices=np.concatenate(simps))


def from_soup(points: np.ndarray, dim: int, ambient: int, mode: str = MASS) -> Complex:
    """Build a complex from per-simplex coordinates (S, d+1, n), merging equal vertices."""
    points = np.asarray(points, dtype=float).reshape(-1, dim + 1, ambient)
    flat = points.reshape(-1, ambient)
    simp = np.arange(len(flat)).reshape(-1, dim + 1)
    return Complex(dim, ambient, flat, simp, mode).merge_vertices()


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(pts) - self.center, axis=1) < self.radius


@dataclass(frozen=True)
class Cube:
    """Closed cube Q_{x,l}: center and edge length."""

    center: np.ndarray
    edge: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.edge > 0:
            raise ValueError("cube edge must be positive")

    @property
    def half_widths(self) -> np.ndarray:
        return np.full(len(self.center), self.edge / 2)


@dataclass(frozen=True)
class Rectangle:
    """R_{x,a,b}: edge a in the first d coordinates, edge b in the rest."""

    center: np.ndarray
    a: float
    b: float
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not (self.a > 0 and self.b > 0):
            raise ValueError("rectangle edges must be positive")

    @property
    def half_widths(self) -> np.ndarray:
        hw = np.full(len(self.center), self.b / 2)
        hw[: self.dim] = self.a / 2
        return hw


def simplex_volume(s: Sequence[int], vertices: np.ndarray) -> float:
    """d-volume of one simplex: sqrt(det(E E^T)) / d! over its edge vectors E."""
    s = np.asarray(s, dtype=np.intp).reshape(1, -1)
    return float(kernels.simplex_volumes(np.asarray(vertices, dtype=float), s)[0])


def simplex_volumes(K: Complex) -> np.ndarray:
    return kernels.simplex_volumes(K.vertices, K.simplices)


def mass(K: Complex) -> float:
    """Total d-mass. Occupancy mode counts exactly coincident simplices once."""
    if K.is_empty:
        return 0.0
    vols = simplex_volumes(K)
    if K.multiplicity_mode == OCCUPANCY:
        seen = set()
        keep = np.zeros(len(vols), dtype=bool)
        for i, pts in enumerate(K.points()):
            key = tuple(sorted(map(tuple, pts.tolist())))
            if key not in seen:
                seen.add(key)
                keep[i] = True
        vols = vols[keep]
    return float(math.fsum(vols))


def mass_and_gradient(K: Complex) -> tuple[float, np.ndarray]:
    return kernels.mass_gradient(K.vertices, K.simplices)


# -- level-set cutting ------------------------------------------------------


class LevelCutter:
    """Recursive edge halving of simplices across the zero set of a function.

    Vertex values are sampled once; a simplex with vertices of both signs is
    split at a crossing point of one of its (negative, positive) edges and the
    two halves recurse. The leaves tile the input exactly. Crossing points are
    cached per edge so neighbouring simplices share them.
    """

    def __init__(self, vertices: np.ndarray, values: np.ndarray,
                 crossing: Callable[[np.ndarray, np.ndarray, float, float], np.ndarray]):
        self._verts = [np.asarray(vertices, dtype=float)]
        self._nverts = len(vertices)
        self._new: list[np.ndarray] = []
        self.values = list(np.asarray(values, dtype=float))
        self._crossing = crossing
        self._cache: dict[tuple[int, int], int] = {}

    def _point(self, i: int) -> np.ndarray:
        if i < self._nverts:
            return self._verts[0][i]
        return self._new[i - self._nverts]

    def crossing_vertex(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = self._cache.get(key)
        if idx is None:
            i, j = key
            p = self._crossing(self._point(i), self._point(j), self.values[i], self.values[j])
            idx = self._nverts + len(self._new)
            self._new.append(np.asarray(p, dtype=float))
            self.values.append(0.0)
            self._cache[key] = idx
        return idx

    def vertices(self) -> np.ndarray:
        if not self._new:
            return self._verts[0]
        return np.concatenate([self._verts[0], np.array(self._new)])

    def cut(self, simplex: Sequence[int], out_neg: list, out_pos: list, out_zero: list) -> None:
        vals = self.values
        neg = [v for v in simplex if vals[v] < 0]
        pos = [v for v in simplex if vals[v] > 0]
        if not pos:
            (out_neg if neg else out_zero).append(tuple(simplex))
            return
        if not neg:
            out_pos.append(tuple(simplex))
            return
        a, b = min(((min(i, o), max(i, o)) for i in neg for o in pos))
        m = self.crossing_vertex(a, b)
        s = list(simplex)
        s1 = [m if v == b else v for v in s]
        s2 = [m if v == a else v for v in s]
        self.cut(s1, out_neg, out_pos, out_zero)
        self.cut(s2, out_neg, out_pos, out_zero)


def linear_crossing(pa, pb, va, vb):
    t = va / (va - vb)
    return pa + t * (pb - pa)


def _sphere_crossing(center: np.ndarray, r: float):
    def crossing(pa, pb, va, vb):
        # exact point on the sphere along segment pa->pb
        d = pb - pa
        f = pa - center
        A = d @ d
        B = 2.0 * (f @ d)
        C = f @ f - r * r
        disc = max(B * B - 4 * A * C, 0.0)
        sq = math.sqrt(disc)
        roots = [(-B - sq) / (2 * A), (-B + sq) / (2 * A)]
        inside = [t for t in roots if 0.0 <= t <= 1.0]
        t = inside[0] if inside else min(max(va / (va - vb), 0.0), 1.0)
        return pa + t * d

    return crossing


def check_generic(K: Complex, ball: Ball) -> None:
    dist = np.linalg.norm(K.vertices[np.unique(K.simplices)] - ball.center, axis=1) if not K.is_empty else np.zeros(0)
    if dist.size and np.min(np.abs(dist - ball.radius)) < SPHERE_TOL * ball.radius:
        raise RadiusNotGeneric(f"vertex within {SPHERE_TOL}*r of sphere radius {ball.radius}")


def generic_radius(K: Complex, center, r: float, max_tries: int = 1000) -> float:
    """Nudge r upward by 10*tau until no vertex is tau-close to the sphere."""
    center = np.asarray(center, dtype=float)
    used = K.vertices[np.unique(K.simplices)] if not K.is_empty else np.zeros((0, K.ambient))
    dist = np.linalg.norm(used - center, axis=1)
    for _ in range(max_tries):
        if not dist.size or np.min(np.abs(dist - r)) >= SPHERE_TOL * r:
            return r
        r += 10 * SPHERE_TOL * r
    raise RadiusNotGeneric("could not find a generic radius")


@dataclass
class SphereSplit:
    """Result of cutting K by a sphere; all parts share ``vertices``."""

    vertices: np.ndarray
    slice: np.ndarray
    inside: np.ndarray
    outside: np.ndarray
    dim: int
    ambient: int
    mode: str = MASS
    slice_dim: int = field(init=False)

    def __post_init__(self):
        self.slice_dim = self.dim - 1

    def part(self, which: str) -> Complex:
        s = getattr(self, which)
        d = self.slice_dim if which == "slice" else self.dim
        return Complex(d, self.ambient, self.vertices, np.asarray(s, dtype=np.intp).reshape(-1, d + 1), self.mode)


def sphere_split(K: Complex, ball: Ball) -> SphereSplit:
    """Cut every simplex of K crossing the sphere of ``ball``.

    Crossing points lie exactly on the sphere. Returns the (d-1)-slice, the
    part inside the closed ball and the part outside, tiling K exactly.
    """
    if K.dim < 1:
        raise ValueError("sphere_split needs d >= 1")
    check_generic(K, ball)
    dist = np.linalg.norm(K.vertices - ball.center, axis=1) - ball.radius
    cutter = LevelCutter(K.vertices, dist, _sphere_crossing(ball.center, ball.radius))
    neg: list = []
    pos: list = []
    zero: list = []
    for s in K.simplices.tolist():
        cutter.cut(s, neg, pos, zero)
    inside = neg + zero
    vals = cutter.values
    counts: dict[tuple, int] = {}
    order: list[tuple] = []
    for s in inside:
        z = [v for v in s if vals[v] == 0.0]
        if len(z) < K.dim:
            continue
        for face in _faces_of(z, K.dim):
            key = tuple(sorted(face))
            if key not in counts:
                order.append(key)
                counts[key] = 0
            counts[key] += 1
    slc = [k for k in order if counts[k] % 2 == 1]
    return SphereSplit(cutter.vertices(), slc, inside, pos, K.dim, K.ambient, K.multiplicity_mode)


def _faces_of(ids: list, size: int) -> Iterable[tuple]:
    
    return combinations(ids, size)


def sphere_slice(K: Complex, ball: Ball) -> tuple[Complex, Complex]:
    """Return (K ∩ ∂B as a (d-1)-complex, K clipped to the closed ball)."""
    sp = sphere_split(K, ball)
    return sp.part("slice").compact(), sp.part("inside").compact()


def clip_to_ball(K: Complex, ball: Ball, local_h: float | None = None) -> Complex:
    """K ∩ B̄ with simplices near the ball refined to edge ``local_h`` first."""
    if K.is_empty:
        return K
    near = _near_ball(K, ball)
    sub = K.subset(near)
    if sub.is_empty:
        return sub
    if local_h is not None:
        sub = _local_refine(sub, ball, local_h)
    return sphere_split(sub, ball).part("inside").compact()


def _near_ball(K: Complex, ball: Ball) -> np.ndarray:
    pts = K.points()
    c = pts.mean(axis=1)
    rad = np.linalg.norm(pts - c[:, None, :], axis=2).max(axis=1)
    return np.linalg.norm(c - ball.center, axis=1) <= ball.radius + rad + 1e-12


def _local_refine(K: Complex, ball: Ball, h: float) -> Complex:
    """Non-conforming longest-edge bisection of simplices crossing the sphere.

    Simplices inside the closed ball are kept whole (their mass is already
    exact) and simplices missing the ball are dropped.
    """
    d = K.dim
    pairs = np.array(list(combinations(range(d + 1), 2)), dtype=np.intp).reshape(-1, 2)
    pending = K.points()
    done = []
    while len(pending):
        c = pending.mean(axis=1)
        rad = np.linalg.norm(pending - c[:, None], axis=2).max(axis=1)
        pending = pending[np.linalg.norm(c - ball.center, axis=1) <= ball.radius + rad]
        inside = np.linalg.norm(pending - ball.center, axis=2).max(axis=1) < ball.radius
        done.append(pending[inside])
        pending = pending[~inside]
        if not len(pairs):
            done.append(pending)
            break
        lengths = np.linalg.norm(pending[:, pairs[:, 0]] - pending[:, pairs[:, 1]], axis=2)
        k = np.argmax(lengths, axis=1)
        small = lengths[np.arange(len(pending)), k] <= h
        done.append(pending[small])
        pending, k = pending[~small], k[~small]
        rows = np.arange(len(pending))
        bi, bj = pairs[k, 0], pairs[k, 1]
        m = 0.5 * (pending[rows, bi] + pending[rows, bj])
        p1 = pending.copy()
        p1[rows, bj] = m
        p2 = pending.copy()
        p2[rows, bi] = m
        pending = np.concatenate([p1, p2])
    done = np.concatenate(done) if done else np.zeros((0, d + 1, K.ambient))
    if not len(done):
        return Complex.empty(K.dim, K.ambient, K.multiplicity_mode)
    return from_soup(done, K.dim, K.ambient, K.multiplicity_mode)


def ball_mass(K: Complex, center, r: float, local_h: float | None = None) -> tuple[float, float]:
    """mass(K ∩ B(center, r')) at a generic radius r' >= r; returns (mass, r')."""
    center = np.asarray(center, dtype=float)
    if K.is_empty:
        return 0.0, r
    if local_h is None:
        local_h = r / 16
    near = _near_ball(K, Ball(center, r))
    sub = K.subset(near)
    if sub.is_empty:
        return 0.0, r
    if K.dim >= 2:
        sub = _local_refine(sub, Ball(center, r), local_h)
    r = generic_radius(sub, center, r)
    clip = sphere_split(sub, Ball(center, r)).part("inside")
    return mass(clip), r


# -- refinement -------------------------------------------------------------


def refine(K: Complex, h: float) -> Complex:
    """Conforming edge bisection until every edge has length <= h.

    All edges longer than h are marked each round and bisected in a global
    order (longest first), so a shared face is split identically from both
    sides and no hanging vertices appear.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if K.is_empty or K.dim == 0 or K.max_edge() <= h:
        return K
    verts = [row for row in K.vertices]
    simps = [tuple(s) for s in K.simplices.tolist()]
    while True:
        V = np.array(verts)
        S = np.array(simps, dtype=np.intp)
        tmp = Complex(K.dim, K.ambient, V, S)
        e = tmp.edges()
        lengths = np.linalg.norm(V[e[:, 0]] - V[e[:, 1]], axis=1)
        long = lengths > h
        if not long.any():
            break
        idx = np.flatnonzero(long)
        order = sorted(idx.tolist(), key=lambda i: (-lengths[i], e[i, 0], e[i, 1]))
        rank = {(int(e[i, 0]), int(e[i, 1])): r for r, i in enumerate(order)}
        mids: dict[tuple[int, int], int] = {}

        def midpoint(key):
            m = mids.get(key)
            if m is None:
                m = len(verts)
                verts.append(0.5 * (verts[key[0]] + verts[key[1]]))
                mids[key] = m
            return m

        def bisect(s):
            best = None
            for i in range(len(s)):
                for j in range(i + 1, len(s)):
                    key = (s[i], s[j]) if s[i] < s[j] else (s[j], s[i])
                    r = rank.get(key)
                    if r is not None and (best is None or r < best[0]):
                        best = (r, key)
            if best is None:
                return [s]
            a, b = best[1]
            m = midpoint(best[1])
            s1 = tuple(m if v == b else v for v in s)
            s2 = tuple(m if v == a else v for v in s)
            return bisect(s1) + bisect(s2)

        new = []
        for s in simps:
            new.extend(bisect(s))
        simps = new
    return K.replace(vertices=np.array(verts), simplices=np.array(simps, dtype=np.intp))


def distance_to_simplices(points: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Distance from each point (p, n) to the union of a stack of simplices (m, k+1, n)."""
    return kernels.distance_to_simplices(points, simplices)


def point_simplex_distance(points: np.ndarray, simplex: np.ndarray) -> np.ndarray:
    """Euclidean distance from each row of ``points`` to the closed simplex with vertex rows ``simplex``."""
    return distance_to_simplices(points, np.asarray(simplex, dtype=float)[None])


def box_mass(K: Complex, lo, hi, tol: float = 1e-12) -> tuple[float, float]:
    """(mass of K inside the closed box [lo, hi], mass of K lying on the box boundary).

    Simplices are cut by the 2n bounding hyperplanes; a piece belongs to the
    box when its centroid does. A piece counts as boundary mass when all of
    its vertices lie within ``tol * diam`` of one bounding hyperplane.
    """
    from ._kernels_py import split_simplex

    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if K.is_empty:
        return 0.0, 0.0
    pts = K.points()
    # only simplices whose bounding box meets the box matter
    keep = np.all((pts.max(axis=1) >= lo) & (pts.min(axis=1) <= hi), axis=1)
    pieces = list(pts[keep])
    for i in range(K.ambient):
        for value in (lo[i], hi[i]):
            out = []
            for p in pieces:
                v = p[:, i] - value
                if (v < 0).any() and (v > 0).any():
                    split_simplex(p, v, out, out, coord=i, value=float(value))
                else:
                    out.append(p)
            pieces = out
    if not pieces:
        return 0.0, 0.0
    P = np.array(pieces)
    c = P.mean(axis=1)
    inside = np.all((c >= lo) & (c <= hi), axis=1)
    scale = tol * max(float(np.linalg.norm(hi - lo)), 1e-300)
    on_face = np.zeros(len(P), dtype=bool)
    for i in range(K.ambient):
        on_face |= np.all(np.abs(P[:, :, i] - lo[i]) <= scale, axis=1)
        on_face |= np.all(np.abs(P[:, :, i] - hi[i]) <= scale, axis=1)
    k = K.dim + 1
    flat = P.reshape(-1, K.ambient)
    vols = kernels.simplex_volumes(flat, np.arange(len(flat), dtype=np.intp).reshape(-1, k))
    return float(math.fsum(vols[inside])), float(math.fsum(vols[inside & on_face]))
