"""Boundary data and spanning conditions.

A candidate complex K spans a boundary H when it meets every test sphere of
a user-supplied finite family. Intersections are decided on closed sets
thickened by ``tau_span = 1e-9 * diam(K and tests)``. The module also
provides the Gauss linking number of polygonal loops (to validate test
families in R^3) and the closest-point retraction used in sliding mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CurvesTooClose, MeshFormatError, RetractionUnavailable
from .geometry import Complex
from .meshio import read_json, read_mesh

SPANNING = "spanning"
SLIDING = "sliding"
TAU_REL = 1e-9
# pairs processed per batch in the narrow phase
_CHUNK = 4096


# ---------------------------------------------------------------------------
# simplex-pair distance


def _faces(k: int) -> list[tuple[int, ...]]:
    return [f for size in range(1, k + 1) for f in combinations(range(k), size)]


def pair_distances(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact distance between paired closed simplices.

    ``A`` is (P, a, n) and ``B`` is (P, b, n). Returns the distances (P,) and
    closest points on A and on B, each (P, n). The minimum over all pairs of
    faces is taken of the closest-point pair of their affine hulls, kept only
    when both points lie in the closed faces; vertex pairs are always valid,
    so the minimum exists.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    P, n = A.shape[0], A.shape[2]
    best = np.full(P, np.inf)
    pa = np.zeros((P, n))
    pb = np.zeros((P, n))
    if P == 0:
        return best, pa, pb
    for F in _faces(A.shape[1]):
        for G in _faces(B.shape[1]):
            fa, gb = A[:, F], B[:, G]
            Ea = fa[:, 1:] - fa[:, :1]  # (P, |F|-1, n)
            Eb = gb[:, 1:] - gb[:, :1]
            M = np.concatenate([Ea, -Eb], axis=1)  # (P, m, n)
            m = M.shape[1]
            if m > n:
                continue
            rhs = gb[:, 0] - fa[:, 0]
            if m == 0:
                coef = np.zeros((P, 0))
                ok = np.ones(P, dtype=bool)
            else:
                gram = np.einsum("pin,pjn->pij", M, M)
                scale = np.einsum("pii->p", gram)
                det = np.linalg.det(gram)
                ok = det > 1e-20 * np.maximum(scale, 1e-300) ** m
                coef = np.zeros((P, m))
                if ok.any():
                    coef[ok] = np.linalg.solve(gram[ok], np.einsum("pin,pn->pi", M[ok], rhs[ok])[..., None])[..., 0]
            s, t = coef[:, : len(F) - 1], coef[:, len(F) - 1:]
            inside = ok & np.all(s >= 0, axis=1) & (s.sum(axis=1) <= 1) & np.all(t >= 0, axis=1) & (t.sum(axis=1) <= 1)
            xa = fa[:, 0] + np.einsum("pi,pin->pn", s, Ea)
            xb = gb[:, 0] + np.einsum("pi,pin->pn", t, Eb)
            dist = np.linalg.norm(xa - xb, axis=1)
            upd = inside & (dist < best)
            best[upd], pa[upd], pb[upd] = dist[upd], xa[upd], xb[upd]
    return best, pa, pb


def _barycentric_hits(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transversal intersection of paired simplices of complementary dimension.

    Solves sum(l_i a_i) = sum(m_j b_j) with both weight vectors summing to 1.
    Returns (hit, singular, point): hit where the unique solution has all
    weights nonnegative, singular where the system is degenerate.
    """
    P, a, n = A.shape
    b = B.shape[1]
    M = np.zeros((P, n + 2, a + b))
    M[:, :n, :a] = np.transpose(A, (0, 2, 1))
    M[:, :n, a:] = -np.transpose(B, (0, 2, 1))
    M[:, n, :a] = 1.0
    M[:, n + 1, a:] = 1.0
    rhs = np.zeros(n + 2)
    rhs[n] = rhs[n + 1] = 1.0
    # scale-free conditioning test on the edge part of the system
    E = np.concatenate([A[:, 1:] - A[:, :1], B[:, 1:] - B[:, :1]], axis=1)
    scale = np.max(np.linalg.norm(E, axis=2), axis=1) if E.shape[1] else np.ones(P)
    scale = np.maximum(scale, 1e-300)
    det = np.abs(np.linalg.det(E / scale[:, None, None])) if E.shape[1] == n else np.zeros(P)
    singular = det < 1e-10
    hit = np.zeros(P, dtype=bool)
    point = np.zeros((P, n))
    good = ~singular
    if good.any():
        w = np.linalg.solve(M[good], np.broadcast_to(rhs, (int(good.sum()), n + 2))[..., None])[..., 0]
        inside = np.all(w >= 0, axis=1)
        hit[good] = inside
        point[good] = np.einsum("pi,pin->pn", w[:, :a], A[good])
    return hit, singular, point


def _aabb_pairs(A: np.ndarray, B: np.ndarray, pad: float) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of simplices whose bounding boxes overlap after padding."""
    alo, ahi = A.min(axis=1) - pad, A.max(axis=1) + pad
    blo, bhi = B.min(axis=1), B.max(axis=1)
    # keep only A boxes meeting the bounding box of all of B, then test pairs
    cand = np.flatnonzero(np.all((alo <= bhi.max(axis=0)) & (ahi >= blo.min(axis=0)), axis=1))
    I, J = [], []
    step = max(1, _CHUNK * 16 // max(len(B), 1))
    for s in range(0, len(cand), step):
        rows = cand[s:s + step]
        lo, hi = alo[rows], ahi[rows]
        ov = np.all((lo[:, None] <= bhi[None]) & (blo[None] <= hi[:, None]), axis=2)
        i, j = np.nonzero(ov)
        I.append(rows[i])
        J.append(j)
    if not I:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    return np.concatenate(I), np.concatenate(J)


@dataclass
class IntersectionResult:
    hit: bool
    point: np.ndarray | None = None
    degenerate_pairs: int = 0

    def __bool__(self) -> bool:
        return self.hit


def first_intersection(A: Complex, B: Complex, tau: float) -> IntersectionResult:
    """Find a point where two complexes meet within ``tau``, or report none."""
    if A.is_empty or B.is_empty:
        return IntersectionResult(False)
    PA, PB = A.points(), B.points()
    I, J = _aabb_pairs(PA, PB, tau)
    degenerate = 0
    complementary = A.dim + B.dim == A.ambient
    leftovers = []
    for s in range(0, len(I), _CHUNK):
        i, j = I[s:s + _CHUNK], J[s:s + _CHUNK]
        if complementary:
            hit, singular, point = _barycentric_hits(PA[i], PB[j])
            degenerate += int(singular.sum())
            if hit.any():
                k = int(np.argmax(hit))
                return IntersectionResult(True, point[k], degenerate)
        leftovers.append((i, j))
    # degenerate or near-touching pairs: decide on the tau-thickened sets
    for i, j in leftovers:
        dist, xa, _ = pair_distances(PA[i], PB[j])
        close = dist <= tau
        if close.any():
            k = int(np.argmax(close))
            return IntersectionResult(True, xa[k], degenerate)
    return IntersectionResult(False, None, degenerate)


def _tau(*parts: Complex) -> float:
    pts = [p.vertices for p in parts if p is not None and len(p.vertices)]
    if not pts:
        return 0.0
    allp = np.concatenate(pts)
    return TAU_REL * float(np.linalg.norm(allp.max(axis=0) - allp.min(axis=0)))


def intersects(A: Complex, B: Complex, tau: float | None = None) -> bool:
    """True iff some simplex of A meets some simplex of B within ``tau``.

    The dimensions must be complementary in the common ambient space.
    Degenerate (coplanar) pairs are resolved by the tau-thickened distance.
    """
    if A.ambient != B.ambient:
        raise ValueError("complexes live in different ambient spaces")
    if A.dim + B.dim != A.ambient:
        raise ValueError(f"dimensions {A.dim} and {B.dim} do not sum to {A.ambient}")
    if tau is None:
        tau = _tau(A, B)
    return first_intersection(A, B, tau).hit


def complex_distance(A: Complex, B: Complex) -> float:
    """Euclidean distance between two complexes (inf if either is empty)."""
    if A.is_empty or B.is_empty:
        return math.inf
    PA, PB = A.points(), B.points()
    best = math.inf
    # grow the pad until some pair is inside it; the true minimum is then among the candidates
    pad = max(A.diameter(), B.diameter(), 1e-12) * 1e-3
    while True:
        I, J = _aabb_pairs(PA, PB, pad)
        if len(I):
            for s in range(0, len(I), _CHUNK):
                dist, _, _ = pair_distances(PA[I[s:s + _CHUNK]], PB[J[s:s + _CHUNK]])
                best = min(best, float(dist.min()))
            if best <= pad:
                return best
        pad *= 4.0


# ---------------------------------------------------------------------------
# spanning data


def _is_closed(mesh: Complex) -> bool:
    k = mesh.dim
    if k == 0:
        return len(mesh.simplices) % 2 == 0
    counts: dict = {}
    for s in mesh.simplices:
        for f in combinations(sorted(int(v) for v in s), k):
            counts[f] = counts.get(f, 0) + 1
    return bool(counts) and all(c == 2 for c in counts.values())


@dataclass(frozen=True, eq=False)
class TestSphere:
    """A closed test (n-d)-sphere mesh with a label."""

    __test__ = False  # keep pytest from collecting this class

    mesh: Complex
    label: str

    def __post_init__(self):
        if not _is_closed(self.mesh):
            raise ValueError(f"test sphere {self.label!r} is not closed")


@dataclass(frozen=True, eq=False)
class SpanningSpec:
    """Boundary complex H, finite family of test spheres, and mode.

    In sliding mode ``tags`` lists the vertex ids of the candidate complex
    that must lie on H, and ``delta`` is the retraction radius.
    """

    H: Complex
    tests: tuple
    mode: str = SPANNING
    delta: float = 0.0
    tags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))
        object.__setattr__(self, "tags", tuple(int(t) for t in self.tags))
        if self.mode not in (SPANNING, SLIDING):
            raise ValueError(f"unknown mode {self.mode!r}")
        for t in self.tests:
            if t.mesh.ambient != self.H.ambient:
                raise ValueError(f"test {t.label!r} has the wrong ambient dimension")
            if not self.H.is_empty and complex_distance(t.mesh, self.H) <= 0.0:
                raise ValueError(f"test {t.label!r} meets the boundary")

    @property
    def ambient(self) -> int:
        return self.H.ambient

    def to_json(self, mesh_names: dict | None = None) -> dict:
        names = mesh_names or {}
        return {
            "H": names.get("H", "H.mesh"),
            "tests": [names.get(t.label, f"{t.label}.mesh") for t in self.tests],
            "labels": [t.label for t in self.tests],
            "mode": self.mode,
            "delta": self.delta,
            "tags": list(self.tags),
        }


def spec_from_json(doc: dict, base: Path | str = ".") -> SpanningSpec:
    """Build a spec from ``{H, tests, mode, delta, [labels], [tags]}`` with mesh paths relative to ``base``.

    ``boundary`` is accepted in place of ``H`` so a problem file doubles as a spec.
    """
    base = Path(base)
    try:
        H = read_mesh(base / (doc["H"] if "H" in doc else doc["boundary"]))
        files = list(doc["tests"])
        labels = doc.get("labels") or [Path(f).stem for f in files]
        tests = [TestSphere(read_mesh(base / f), str(lab)) for f, lab in zip(files, labels)]
        return SpanningSpec(H, tests, doc.get("mode", SPANNING), float(doc.get("delta", 0.0)),
                            tuple(doc.get("tags", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"bad spanning spec: {exc}") from exc


def read_spec(path) -> SpanningSpec:
    path = Path(path)
    return spec_from_json(read_json(path), path.parent)


# ---------------------------------------------------------------------------
# spanning test


@dataclass
class SpanReport:
    """Outcome of :func:`spans`: one witness point (or None) per test label."""

    ok: bool
    witnesses: dict = field(default_factory=dict)
    failing: list = field(default_factory=list)
    tau: float = 0.0
    degenerate_pairs: int = 0

    def __bool__(self) -> bool:
        return self.ok

    def to_json(self) -> dict:
        return {
            "spans": self.ok,
            "tau": self.tau,
            "failing": list(self.failing),
            "witnesses": {k: (None if v is None else [float(x) for x in v]) for k, v in self.witnesses.items()},
            "degenerate_pairs": self.degenerate_pairs,
        }


def spans(K: Complex, spec: SpanningSpec) -> SpanReport:
    """Check that K meets every test sphere of the spec within tau_span."""
    tau = _tau(K, *[t.mesh for t in spec.tests])
    report = SpanReport(True, tau=tau)
    for t in spec.tests:
        res = first_intersection(K, t.mesh, tau)
        report.degenerate_pairs += res.degenerate_pairs
        report.witnesses[t.label] = res.point if res.hit else None
        if not res.hit:
            report.ok = False
            report.failing.append(t.label)
    return report


# ---------------------------------------------------------------------------
# linking number


def _as_loop(curve) -> np.ndarray:
    """Vertex cycle of a closed polygon given as an array or a 1-complex."""
    if isinstance(curve, Complex):
        if curve.dim != 1:
            raise ValueError("linking needs 1-dimensional curves")
        nxt: dict = {}
        for a, b in curve.simplices:
            nxt.setdefault(int(a), []).append(int(b))
            nxt.setdefault(int(b), []).append(int(a))
        if any(len(v) != 2 for v in nxt.values()):
            raise ValueError("curve is not a single closed loop")
        start = int(curve.simplices[0, 0])
        order, prev, cur = [start], None, start
        while True:
            a, b = nxt[cur]
            step = a if a != prev else b
            if step == start:
                break
            order.append(step)
            prev, cur = cur, step
        if len(order) != len(nxt):
            raise ValueError("curve has several components")
        return curve.vertices[order]
    pts = np.asarray(curve, dtype=float)
    if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


def _segments(loop: np.ndarray) -> np.ndarray:
    return np.stack([loop, np.roll(loop, -1, axis=0)], axis=1)


def linking_number(a, b, seed: int = 0, max_tries: int = 32) -> int:
    """Linking number of two disjoint closed polygons in R^3 by signed crossings.

    The curves are projected along a seeded random direction; the crossings
    where ``a`` passes over ``b`` are summed with their orientation signs.
    Directions that produce a crossing at a segment endpoint are rejected.
    """
    A, B = _as_loop(a), _as_loop(b)
    if A.shape[1] != 3 or B.shape[1] != 3:
        raise ValueError("linking number is defined for curves in R^3")
    SA, SB = _segments(A), _segments(B)
    both = np.concatenate([A, B])
    diam = float(np.linalg.norm(both.max(axis=0) - both.min(axis=0)))
    ia, ib = np.meshgrid(np.arange(len(SA)), np.arange(len(SB)), indexing="ij")
    dist, _, _ = pair_distances(SA[ia.ravel()], SB[ib.ravel()])
    if dist.min() < 1e-9 * diam:
        raise CurvesTooClose(f"curves are {dist.min():.3g} apart (diameter {diam:.3g})")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        e1 = np.cross(v, [1.0, 0.0, 0.0] if abs(v[0]) < 0.9 else [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(v, e1)
        basis = np.stack([e1, e2], axis=1)
        pa, pb = SA @ basis, SB @ basis  # (m, 2, 2)
        p, r = pa[:, None, 0], pa[:, None, 1] - pa[:, None, 0]
        q, s = pb[None, :, 0], pb[None, :, 1] - pb[None, :, 0]
        cross = lambda x, y: x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0]
        den = cross(r, s)
        safe = np.where(np.abs(den) > 1e-300, den, 1.0)
        t = cross(q - p, s) / safe
        u = cross(q - p, r) / safe
        par = np.abs(den) <= 1e-14 * (np.linalg.norm(r, axis=-1) * np.linalg.norm(s, axis=-1) + 1e-300)
        eps = 1e-9
        near = (t > -eps) & (t < 1 + eps) & (u > -eps) & (u < 1 + eps)
        ends = near & ((np.abs(t) < eps) | (np.abs(t - 1) < eps) | (np.abs(u) < eps) | (np.abs(u - 1) < eps))
        if (near & par).any() or ends.any():
            continue
        i, j = np.nonzero(near & ~par)
        ha = (SA[i, 0] + t[i, j, None] * (SA[i, 1] - SA[i, 0])) @ v
        hb = (SB[j, 0] + u[i, j, None] * (SB[j, 1] - SB[j, 0])) @ v
        over = ha > hb
        da = SA[i, 1] - SA[i, 0]
        db = SB[j, 1] - SB[j, 0]
        sign = np.sign(np.einsum("pi,i->p", np.cross(da, db), v))
        return int(round(float(sign[over].sum())))
    raise CurvesTooClose("no generic projection direction found")


# ---------------------------------------------------------------------------
# sliding constraint


def closest_points(points: np.ndarray, H: Complex) -> tuple[np.ndarray, np.ndarray]:
    """Closest point of H to each point and the distance."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if H.is_empty:
        raise RetractionUnavailable("boundary complex has no simplices")
    PH = H.points()
    out = np.zeros_like(points)
    dist = np.full(len(points), np.inf)
    for k, x in enumerate(points):
        A = np.broadcast_to(x, (len(PH), 1, len(x)))
        dd, _, pb = pair_distances(A, PH)
        j = int(np.argmin(dd))
        dist[k], out[k] = dd[j], pb[j]
    return out, dist


@dataclass
class SlideReport:
    retracted: list
    lipschitz: float
    max_tagged_offset: float


def sliding_project(K: Complex, spec: SpanningSpec, retraction: Callable | None = None,
                    n_lip_samples: int = 200, seed: int = 0) -> tuple[Complex, SlideReport]:
    """Retract tagged vertices and vertices within ``spec.delta`` of H onto H.

    ``retraction`` maps (m, n) points to (m, n) points of H; by default the
    closest-point projection onto the polyhedral H is used. The Lipschitz
    constant of the applied retraction is estimated on the moved vertices and
    on random point pairs within delta of H.
    """
    if spec.mode != SLIDING:
        raise ValueError("sliding_project needs a spec in sliding mode")
    if retraction is None:
        if spec.H.is_empty:
            raise RetractionUnavailable("no polyhedral boundary and no retraction supplied")
        floor = 1e-12 * max(spec.H.diameter(), 1e-300)

        def retraction(p):
            # points already on H (up to roundoff) stay put
            q, dist = closest_points(p, spec.H)
            return np.where((dist <= floor)[:, None], p, q)
    V = K.vertices.copy()
    if len(V) == 0:
        return K, SlideReport([], 0.0, 0.0)
    if spec.H.is_empty:
        near = np.zeros(len(V), dtype=bool)
    else:
        _, dist = closest_points(V, spec.H)
        near = dist <= spec.delta
    near[list(spec.tags)] = True
    idx = np.flatnonzero(near)
    if len(idx):
        V[idx] = retraction(V[idx])
    # Lipschitz estimate on moved vertices and random pairs near H
    rng = np.random.default_rng(seed)
    src = [K.vertices[idx]]
    if not spec.H.is_empty and spec.delta > 0:
        PH = spec.H.points()
        w = rng.dirichlet(np.ones(spec.H.dim + 1), size=n_lip_samples)
        base = np.einsum("pk,pkn->pn", w, PH[rng.integers(0, len(PH), n_lip_samples)])
        off = rng.normal(size=base.shape)
        off *= (spec.delta * rng.random(n_lip_samples) / np.linalg.norm(off, axis=1))[:, None]
        src.append(base + off)
    X = np.concatenate(src)
    lip = 0.0
    if len(X) >= 2:
        Y = retraction(X)
        i, j = np.triu_indices(len(X), 1)
        dx = np.linalg.norm(X[i] - X[j], axis=1)
        dy = np.linalg.norm(Y[i] - Y[j], axis=1)
        ok = dx > 1e-12
        lip = float(np.max(dy[ok] / dx[ok])) if ok.any() else 0.0
    off_tag = 0.0
    if spec.tags and not spec.H.is_empty:
        off_tag = float(closest_points(V[list(spec.tags)], spec.H)[1].max())
    return K.with_vertices(V), SlideReport([int(i) for i in idx], lip, off_tag)
