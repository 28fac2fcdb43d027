"""Cubical grids with frames and skeleta, and the grid deformation.

The deformation is the composition of a radial projection stage, which
pushes a complex from the interior of every m-face (m = n down to d+1) onto
the face boundary, and a cleanup stage, which empties d-faces of the core
that are only partially covered.

All work happens in lattice units ``u = (x - center) / cell + 1/2`` in which
cell ``k`` is the unit box ``[k, k + 1]``. The complex is first clipped by the
integer planes so every piece lies in a single face. Central projection from
a point maps straight simplices to straight simplices on each pyramid of a
face, so after splitting pieces along the pyramid boundaries the image is
computed exactly, with no refinement of the input.

Faces are identified by "doubled" integer codes: entry ``a_i`` even means the
face has ``u_i = a_i / 2`` fixed, odd means ``u_i`` ranges over
``[(a_i - 1) / 2, (a_i + 1) / 2]``. The face dimension is the number of odd
entries.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from shapely import maximum_inscribed_circle
from shapely.geometry import Polygon, box
from shapely.ops import unary_union

from . import kernels
from ._kernels_py import pyramid_functions, snap as _snap, split_simplex as _split
from .errors import GridTooCoarse, HoleNotFound, ProjectionCenterNotFound, RatioOutOfRange
from .geometry import Complex, Cube, Rectangle, distance_to_simplices

log = logging.getLogger(__name__)

SNAP = 1e-9  # lattice-unit distance below which a coordinate is put on its grid plane
CENTER_CLEARANCE = 1e-2  # projection centers keep eps/100 away from the complex
SCAN_RESOLUTION = 32
FULL_TOL = 1e-3  # a face is full when every scan point is within eps/1000 of the image
MAX_CENTER_TRIES = 64
DEFAULT_CANDIDATES = 8
MASS_FLOOR = 1e-9  # cells with mass(E n T) below this times eps^d carry no ratio
_SEED_OFFSET = 1 << 20


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class Grid:
    """Lattice of cells of edge ``cell`` (per coordinate) centred at ``center``.

    Cells meeting the interior of the domain are indexed by integer vectors
    ``k`` with ``kmin <= k <= kmax``. The outer layer is the frame C1, the next
    layer the frame C2, the rest the core Q1.
    """

    domain: Cube | Rectangle
    eps: float
    center: np.ndarray
    cell: np.ndarray
    kmin: np.ndarray
    kmax: np.ndarray

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> np.ndarray:
        """Lower lattice bound of Q1 u C2."""
        return self.kmin + 1

    @property
    def hi(self) -> np.ndarray:
        return self.kmax

    @property
    def core_lo(self) -> np.ndarray:
        return self.kmin + 2

    @property
    def core_hi(self) -> np.ndarray:
        return self.kmax - 1

    def to_lattice(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.cell + 0.5

    def from_lattice(self, u: np.ndarray) -> np.ndarray:
        return self.center + (np.asarray(u, dtype=float) - 0.5) * self.cell

    def cells_per_side(self) -> np.ndarray:
        return self.kmax - self.kmin + 1

    def counts(self) -> dict:
        side = self.cells_per_side()
        total = int(np.prod(side))
        inner = int(np.prod(side - 2))
        core = int(np.prod(side - 4))
        return {"total": total, "C1": total - inner, "C2": inner - core, "Q1": core}

    def layer(self, k) -> str:
        """Which of C1, C2, Q1 (or "outside") contains cell ``k``."""
        k = np.asarray(k)
        depth = int(np.min(np.minimum(k - self.kmin, self.kmax - k)))
        if depth < 0:
            return "outside"
        return ("C1", "C2")[depth] if depth < 2 else "Q1"

    def cells(self, which: str = "all") -> np.ndarray:
        """Integer indices of the cells in "all", "C1", "C2", "Q1" or "Q1C2"."""
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(self.kmin, self.kmax)], indexing="ij")
        k = np.stack([g.ravel() for g in grids], axis=1)
        depth = np.min(np.minimum(k - self.kmin, self.kmax - k), axis=1)
        sel = {"all": depth >= 0, "C1": depth == 0, "C2": depth == 1, "Q1": depth >= 2, "Q1C2": depth >= 1}[which]
        return k[sel]

    def faces(self, m: int, region: str = "Q1C2") -> tuple[np.ndarray, np.ndarray]:
        """All m-faces of the cells of ``region`` ("Q1C2" or "Q1") as doubled codes.

        Returns (codes, interior) where ``interior`` flags faces not contained
        in the boundary of the region.
        """
        lo, hi = (self.lo, self.hi) if region == "Q1C2" else (self.core_lo, self.core_hi)
        codes = []
        for free in combinations(range(self.n), m):
            axes = []
            for i in range(self.n):
                if i in free:
                    axes.append(range(2 * lo[i] + 1, 2 * hi[i], 2))
                else:
                    axes.append(range(2 * lo[i], 2 * hi[i] + 1, 2))
            codes.extend(product(*axes))
        codes = np.array(codes, dtype=np.int64).reshape(-1, self.n)
        return codes, face_interior(codes, lo, hi)

    def face_tables(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        return {m: self.faces(m) for m in range(self.n + 1)}

    def to_json(self) -> dict:
        if isinstance(self.domain, Rectangle):
            dom = {"kind": "rectangle", "center": self.domain.center.tolist(), "a": self.domain.a,
                   "b": self.domain.b, "dim": self.domain.dim}
        else:
            dom = {"kind": "cube", "center": self.domain.center.tolist(), "edge": self.domain.edge}
        return {"domain": dom, "eps": self.eps, "center": self.center.tolist()}


def grid_from_json(desc: dict) -> Grid:
    dom = desc["domain"]
    if dom["kind"] == "rectangle":
        domain = Rectangle(np.array(dom["center"], dtype=float), float(dom["a"]), float(dom["b"]), int(dom["dim"]))
    else:
        domain = Cube(np.array(dom["center"], dtype=float), float(dom["edge"]))
    center = desc.get("center")
    return build_grid(domain, float(desc["eps"]), None if center is None else np.asarray(center, dtype=float))


def build_grid(domain: Cube | Rectangle, eps: float, center=None) -> Grid:
    """Cover ``domain`` by the cells (edge ``eps``) meeting its interior, one cell centred at ``center``.

    For a rectangle the cells are homothetic to it: edge ``eps`` along the
    first ``dim`` axes and ``eps * b / a`` along the others.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    c = domain.center if center is None else np.asarray(center, dtype=float)
    n = len(domain.center)
    cell = np.full(n, float(eps))
    if isinstance(domain, Rectangle):
        ratio = domain.a / domain.b
        if not 1.0 <= ratio <= 4.0:
            raise RatioOutOfRange(f"side ratio a/b = {ratio:.6g} outside [1, 4]")
        cell[domain.dim:] = eps * domain.b / domain.a
    hw = domain.half_widths
    qlo = (domain.center - hw - c) / cell
    qhi = (domain.center + hw - c) / cell
    # cell k spans [k - 1/2, k + 1/2] in units of cell around c and must meet the open domain
    kmin = (np.floor(qlo - 0.5) + 1).astype(np.int64)
    kmax = (np.ceil(qhi + 0.5) - 1).astype(np.int64)
    if np.any(kmax - kmin < 4):
        raise GridTooCoarse(f"cell edge {eps} leaves no core cell (cells per side {kmax - kmin + 1})")
    return Grid(domain, float(eps), c, cell, kmin, kmax)


def face_dim(code) -> int:
    return sum(int(a) % 2 for a in code)


def face_bounds(code) -> tuple[np.ndarray, np.ndarray]:
    code = np.asarray(code)
    return (code // 2).astype(float), ((code + 1) // 2).astype(float)


def face_interior(codes: np.ndarray, lo, hi) -> np.ndarray:
    """True for faces inside the lattice box [lo, hi] that are not in its boundary."""
    codes = np.atleast_2d(codes)
    inside = np.all(codes // 2 >= lo, axis=1) & np.all((codes + 1) // 2 <= hi, axis=1)
    fixed = codes % 2 == 0
    on_bd = np.any(fixed & ((codes == 2 * np.asarray(lo)) | (codes == 2 * np.asarray(hi))), axis=1)
    return inside & ~on_bd


def face_inside(code, lo, hi) -> bool:
    code = np.asarray(code)
    return bool(np.all(code // 2 >= lo) and np.all((code + 1) // 2 <= hi))


def cells_of(code) -> list[tuple]:
    """Cells whose closure contains the face."""
    axes = [[a // 2] if a % 2 else [a // 2 - 1, a // 2] for a in (int(x) for x in code)]
    return list(product(*axes))


def _face_measure(code, cell: np.ndarray) -> float:
    return float(np.prod(cell[np.asarray(code) % 2 == 1]))


def face_id(code) -> str:
    return ":".join(str(int(a)) for a in code)


# ---------------------------------------------------------------------------
# piece geometry in lattice units


def _clip(pieces: list[np.ndarray], lo: np.ndarray, hi: np.ndarray) -> list[tuple[np.ndarray, int]]:
    """Cut every piece by the integer planes u_i = k, lo_i <= k <= hi_i. Returns (piece, input index)."""
    items = [(_snap(p), j) for j, p in enumerate(pieces)]
    n = len(lo)
    for i in range(n):
        out = []
        for p, j in items:
            x = p[:, i]
            first = max(int(lo[i]), math.floor(x.min()) + 1)
            last = min(int(hi[i]), math.ceil(x.max()) - 1)
            cur = [p]
            for k in range(first, last + 1):
                nxt = []
                for q in cur:
                    v = q[:, i] - k
                    if (v < 0).any() and (v > 0).any():
                        _split(q, v, nxt, nxt, coord=i, value=float(k))
                    else:
                        nxt.append(q)
                cur = nxt
            out.extend((q, j) for q in cur)
        items = out
    return items


def _classify_many(pieces: np.ndarray) -> list[tuple]:
    """Doubled codes of the smallest grid faces containing a stack (P, k+1, n) of clipped pieces."""
    if len(pieces) == 0:
        return []
    r = np.rint(pieces[:, 0])
    fixed = np.all(pieces == r[:, None, :], axis=1)
    free = np.floor(pieces.mean(axis=1))
    codes = np.where(fixed, 2 * r, 2 * free + 1).astype(np.int64)
    return [tuple(row) for row in codes.tolist()]


def _classify(p: np.ndarray) -> tuple:
    """Doubled code of the smallest grid face containing the (clipped) piece."""
    return _classify_many(p[None])[0]


def _is_interior(code: tuple, lo, hi) -> bool:
    """Pure-Python twin of face_interior for one face (lo, hi are int sequences)."""
    for a, l, h in zip(code, lo, hi):
        if a % 2:
            if a // 2 < l or a // 2 + 1 > h:
                return False
        elif not l < a // 2 < h:
            return False
    return True


def _volumes(pieces: list[np.ndarray], cell: np.ndarray) -> np.ndarray:
    if not pieces:
        return np.zeros(0)
    arr = np.stack(pieces) * cell
    k = arr.shape[1]
    verts = arr.reshape(-1, arr.shape[2])
    simp = np.arange(len(verts), dtype=np.intp).reshape(-1, k)
    return kernels.simplex_volumes(verts, simp)


def _project(pieces: list[np.ndarray], code, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central projection from ``c`` of pieces in the face ``code`` onto the face boundary."""
    lower, upper = face_bounds(code)
    return kernels.project_pieces(np.stack(pieces), c, lower, upper)


def _scale(p: np.ndarray, code, c: np.ndarray) -> tuple[float, int, np.ndarray]:
    """Pyramid scale of one point about ``c`` in the face ``code``: (s, facet axis, facet bound)."""
    lower, upper = face_bounds(code)
    ax, bd, inv = pyramid_functions(c, lower, upper)
    sv = (p[ax] - c[ax]) * inv
    j = int(np.argmax(sv))
    return float(sv[j]), int(ax[j]), float(bd[j])


def _piece_distance(point: np.ndarray, pieces: list[np.ndarray]) -> float:
    if not pieces:
        return math.inf
    return float(distance_to_simplices(point[None, :], np.stack(pieces))[0])


def _face_rng(seed: int, tag: int, code) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag)] + [int(a) + _SEED_OFFSET for a in code])


def _choose_center(pieces: list[np.ndarray], code, cell: np.ndarray, seed: int,
                   n_candidates: int = DEFAULT_CANDIDATES, groups: list | None = None,
                   ledger: tuple[dict, dict] | None = None):
    """Pick the projection center of a face.

    Candidates are the face centroid and seeded random points of the middle
    third of the face, kept only if they are farther than eps/100 from the
    pieces. ``groups`` lists, per piece, the grid cells it is accounted to.
    With ``ledger = (current, original)`` per-cell masses, the winner
    minimises the worst predicted cumulative ratio of the cells touching the
    face; without it, the worst amplification within this face. Ties go to
    the smaller total image mass. Returns (center, images, owner).
    """
    lower, upper = face_bounds(code)
    free = np.asarray(code) % 2 == 1
    centroid = 0.5 * (lower + upper)
    rng = _face_rng(seed, 0, code)
    if groups is None:
        groups = [(0,)] * len(pieces)
    labels = list(dict.fromkeys(c for gr in groups for c in gr))
    member = np.zeros((len(labels), len(pieces)))
    pos = {c: i for i, c in enumerate(labels)}
    for j, gr in enumerate(groups):
        for c in gr:
            member[pos[c], j] = 1.0
    pre = member @ _volumes(pieces, cell)
    if ledger is not None:
        current, original = ledger
        base = np.array([current[c] for c in labels]) - pre
        scale = np.array([original[c] for c in labels])
    else:
        base = np.zeros(len(labels))
        scale = np.where(pre > 0, pre, np.inf)
    best = None
    tried = 0
    while tried < MAX_CENTER_TRIES and (tried <= n_candidates or best is None):
        if tried == 0:
            c = centroid
        else:
            c = centroid.copy()
            c[free] = lower[free] + (1.0 + rng.random(int(free.sum()))) / 3.0
        tried += 1
        if _piece_distance(c, pieces) <= CENTER_CLEARANCE:
            continue
        images, owner = _project(pieces, code, c)
        vols = _volumes(list(images), cell)
        per_piece = np.bincount(owner, weights=vols, minlength=len(pieces))
        key = (float(np.max((base + member @ per_piece) / scale)), float(vols.sum()))
        if best is None or key < best[0]:
            best = (key, c, images, owner)
    if best is None:
        raise ProjectionCenterNotFound(f"no admissible center in face {face_id(code)} after {tried} tries")
    return best[1], best[2], best[3]


# ---------------------------------------------------------------------------
# occupancy and hole search


def _scan_points(code) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred SCAN_RESOLUTION^d sub-lattice of a face, as lattice points and free-axis indices."""
    lower, _ = face_bounds(code)
    free = np.flatnonzero(np.asarray(code) % 2 == 1)
    if len(free) == 0:
        return lower[None, :], free
    ticks = (np.arange(SCAN_RESOLUTION) + 0.5) / SCAN_RESOLUTION
    mesh = np.meshgrid(*([ticks] * len(free)), indexing="ij")
    local = np.stack([g.ravel() for g in mesh], axis=1)
    pts = np.tile(lower, (len(local), 1))
    pts[:, free] += local
    return pts, free


def _gap_1d(pieces: np.ndarray) -> tuple[float, float]:
    """Largest uncovered half-length of [0, 1] under the intervals, and its midpoint."""
    iv = np.sort(np.clip(pieces[:, :, 0], 0.0, 1.0), axis=1)
    iv = iv[np.argsort(iv[:, 0])]
    best, mid, reach = 0.0, 0.5, 0.0
    for a, b in iv:
        if a > reach and (a - reach) / 2 > best:
            best, mid = (a - reach) / 2, (a + reach) / 2
        reach = max(reach, b)
    # an uncovered end: the face vertex is that far from the pieces; the pole stays interior
    if reach < 1.0 and 1.0 - reach > best:
        best, mid = 1.0 - reach, (1.0 + reach) / 2
    if len(iv) and iv[0, 0] > best:
        best, mid = float(iv[0, 0]), float(iv[0, 0]) / 2
    if not len(iv):
        best, mid = 1.0, 0.5
    return float(best), float(mid)


def _gap_2d(pieces: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest distance from a point of the unit square to the union of the triangles."""
    square = box(0.0, 0.0, 1.0, 1.0)
    tris = [Polygon(t) for t in pieces if abs(np.linalg.det(t[1:] - t[:1])) > 1e-14]
    rest = square.difference(unary_union(tris)) if tris else square
    if rest.is_empty or rest.area < 1e-14:
        return 0.0, np.full(2, 0.5)
    if not tris:
        return float(np.sqrt(0.5)), np.full(2, 0.5)
    parts = getattr(rest, "geoms", [rest])
    best, where = 0.0, np.full(2, 0.5)
    for part in parts:
        if not isinstance(part, Polygon) or part.area < 1e-14:
            continue
        # a hole touching the face boundary is measured against the pieces only
        line = maximum_inscribed_circle(part, tolerance=1e-6)
        y = np.array(line.coords[0])
        r = float(distance_to_simplices(y[None], pieces)[0])
        if r > best:
            best, where = r, y
    return best, where


def scan_face(pieces: list[np.ndarray], code) -> tuple[float, np.ndarray]:
    """Largest distance from a point of the face to the pieces, and a point attaining it.

    Exact for faces of dimension up to two (interval union, polygon union);
    higher faces use the SCAN_RESOLUTION^d lattice.
    """
    pts, free = _scan_points(code)
    if len(free) == 0:
        return 0.0, pts[0]
    lower, _ = face_bounds(code)
    simp = np.stack(pieces)[:, :, free] - lower[free]
    if len(free) in (1, 2):
        if len(free) == 1:
            gap, mid = _gap_1d(simp)
            local = np.array([mid])
        else:
            gap, local = _gap_2d(simp)
        y = lower.astype(float).copy()
        y[free] += local
        return gap, y
    local = pts[:, free] - lower[free]
    dist = np.full(len(pts), np.inf)
    # points inside some piece have distance 0; only the others need the exact search
    A = np.transpose(simp[:, 1:] - simp[:, :1], (0, 2, 1))  # (m, d, d)
    good = np.abs(np.linalg.det(A)) > 1e-14
    covered = np.zeros(len(pts), dtype=bool)
    if good.any():
        Ainv = np.linalg.inv(A[good])
        lam = np.einsum("mij,mpj->mpi", Ainv, local[None] - simp[good][:, :1])
        covered = np.any(np.all(lam >= 0, axis=2) & (lam.sum(axis=2) <= 1), axis=0)
    dist[covered] = 0.0
    if (~covered).any():
        dist[~covered] = distance_to_simplices(local[~covered], simp)
    j = int(np.argmax(dist))
    return float(dist[j]), pts[j]


EMPTY, PARTIAL, FULL = "empty", "partial", "full"


@dataclass
class FaceOccupancy:
    """State of the interior d-faces of the core; faces not listed are empty."""

    states: dict[tuple, str] = field(default_factory=dict)
    before: dict[tuple, str] = field(default_factory=dict)

    def state(self, code) -> str:
        return self.states.get(tuple(int(a) for a in code), EMPTY)

    def count(self, state: str) -> int:
        return sum(1 for s in self.states.values() if s == state)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["face_id", "state"])
        for code in sorted(self.states):
            w.writerow([face_id(code), self.states[code]])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# the deformation


@dataclass
class GridDeformation:
    """Outcome of the grid deformation of one complex, with the data needed to replay it on points."""

    grid: Grid
    dim: int
    seed: int
    projected: Complex
    image: Complex
    occupancy: FaceOccupancy
    centers: dict[tuple, np.ndarray]
    holes: dict[tuple, tuple[np.ndarray, float]]
    cell_ratios: dict[tuple, float]
    projection_ratios: dict[tuple, float]
    unresolved: list[tuple] = field(default_factory=list)

    @property
    def k1(self) -> float:
        """Worst per-cell ratio mass(Phi(E n T)) / mass(E n T); 1 when no cell carries mass."""
        return max(self.cell_ratios.values(), default=1.0)

    @property
    def projection_k1(self) -> float:
        return max(self.projection_ratios.values(), default=1.0)

    # point maps -----------------------------------------------------------

    def project_points(self, x: np.ndarray) -> np.ndarray:
        """The projection stage applied to points (ambient coordinates)."""
        g = self.grid
        u = _snap(g.to_lattice(np.atleast_2d(x)))
        out = np.array(x, dtype=float, copy=True).reshape(u.shape)
        for row in range(len(u)):
            p = u[row]
            moved = False
            for m in range(g.n, self.dim, -1):
                code = _classify(p[None, :])
                if face_dim(code) != m or not face_interior(np.array([code]), g.lo, g.hi)[0]:
                    continue
                c = self.centers.get(code)
                if c is None:
                    lower, upper = face_bounds(code)
                    c = 0.5 * (lower + upper)
                s, axis, bound = _scale(p, code, c)
                if s <= 0:
                    break  # the point is the center itself; the map is not defined there
                lower, upper = face_bounds(code)
                p = np.clip(c + (p - c) / s, lower, upper)
                p[axis] = bound
                p = _snap(p)
                moved = True
            if moved:
                out[row] = g.from_lattice(p)
        return out

    def cleanup_points(self, x: np.ndarray) -> np.ndarray:
        """The cleanup map Psi applied to points, extended over higher faces by pyramids."""
        g = self.grid
        u = _snap(g.to_lattice(np.atleast_2d(x)))
        out = np.array(x, dtype=float, copy=True).reshape(u.shape)
        if not self.holes:
            return out
        for row in range(len(u)):
            img = self._psi(u[row])
            if not np.array_equal(img, u[row]):
                out[row] = g.from_lattice(img)
        return out

    def map_points(self, x: np.ndarray) -> np.ndarray:
        return self.cleanup_points(self.project_points(x))

    def _psi(self, p: np.ndarray) -> np.ndarray:
        g = self.grid
        code = _classify(p[None, :])
        m = face_dim(code)
        if m < self.dim or not face_inside(code, g.lo, g.hi):
            return p
        if m == self.dim:
            hole = self.holes.get(code)
            if hole is None:
                return p
            y, delta = hole
            s = _scale(p, code, y)[0]
            r = float(np.linalg.norm(p - y))
            if s <= 0 or r == 0:
                return p
            alpha = 1.0 / s - 1.0
            lower, upper = face_bounds(code)
            return _snap(np.clip(p + alpha * (p - y) * min(1.0, r / delta), lower, upper))
        lower, upper = face_bounds(code)
        o = 0.5 * (lower + upper)
        s, axis, bound = _scale(p, code, o)
        if s <= 0:
            return p
        q = np.clip(o + (p - o) / s, lower, upper)
        q[axis] = bound
        q = _snap(q)
        return o + s * (self._psi(q) - o)


def _to_complex(pieces: list[np.ndarray], g: Grid, dim: int, n: int) -> Complex:
    if not pieces:
        return Complex.empty(dim, n)
    arr = g.from_lattice(np.stack(pieces))
    k = dim + 1
    verts = arr.reshape(-1, n)
    return Complex(dim, n, verts, np.arange(len(verts), dtype=np.intp).reshape(-1, k)).merge_vertices()


def _region_cells(code, g: Grid) -> list[tuple]:
    lo, hi = g.kmin + 1, g.kmax - 1
    return [c for c in cells_of(code) if all(lo[i] <= c[i] <= hi[i] for i in range(g.n))]


def deform(K: Complex, g: Grid, seed: int = 0, n_candidates: int = DEFAULT_CANDIDATES,
           strict_holes: bool = False) -> GridDeformation:
    """Projection stage followed by cleanup, with per-cell mass ratios."""
    if K.ambient != g.n:
        raise ValueError(f"complex lives in R^{K.ambient}, grid in R^{g.n}")
    d, n = K.dim, g.n
    vol_floor = MASS_FLOOR * float(np.prod(g.cell[:d])) if d else 0.0
    pieces = [g.to_lattice(p) for p in K.points()]
    clipped = _clip(pieces, g.lo, g.hi)
    base = [p for p, _ in clipped]
    base_mass = _volumes(base, g.cell)
    live = np.flatnonzero(base_mass > 0)
    base_codes = _classify_many(np.array(base).reshape((-1,) + pieces[0].shape) if base else np.zeros((0, d + 1, n)))
    # items: (piece, source piece index, face code)
    items = [(base[i], int(i), base_codes[i]) for i in live]
    cells_by_src = {int(i): tuple(_region_cells(base_codes[i], g)) or (None,) for i in live}
    original: dict = defaultdict(float)
    for i in live:
        for c in cells_by_src[int(i)]:
            original[c] += base_mass[i]
    for c in original:
        original[c] = max(original[c], vol_floor, 1e-300)
    current = dict(original)
    centers: dict[tuple, np.ndarray] = {}
    lo, hi = g.lo.tolist(), g.hi.tolist()
    core_lo, core_hi = g.core_lo.tolist(), g.core_hi.tolist()
    for m in range(n, d, -1):
        groups: dict[tuple, list] = defaultdict(list)
        rest = []
        for it in items:
            code = it[2]
            if face_dim(code) == m and _is_interior(code, lo, hi):
                groups[code].append(it)
            else:
                rest.append(it)
        for code in sorted(groups):
            members = groups[code]
            groups_of = [cells_by_src[it[1]] for it in members]
            plist = [it[0] for it in members]
            c, imgs, owner = _choose_center(plist, code, g.cell, seed, n_candidates, groups_of, (current, original))
            centers[code] = c
            delta = np.bincount(owner, weights=_volumes(list(imgs), g.cell), minlength=len(plist)) - _volumes(plist, g.cell)
            for j, gr in enumerate(groups_of):
                for cl in gr:
                    current[cl] += delta[j]
            vols = _volumes(list(imgs), g.cell)
            keep = vols > 0
            imgs, owner = imgs[keep], owner[keep]
            rest.extend((q, members[o][1], cq) for q, o, cq in zip(imgs, owner, _classify_many(imgs)))
        items = rest
    projected_items = items
    projected = _to_complex([it[0] for it in items], g, d, n)

    # cleanup of partially covered interior d-faces of the core
    occupancy = FaceOccupancy()
    holes: dict[tuple, tuple[np.ndarray, float]] = {}
    unresolved = []
    by_face: dict[tuple, list] = defaultdict(list)
    others = []
    for it in items:
        code = it[2]
        if face_dim(code) == d and _is_interior(code, core_lo, core_hi):
            by_face[code].append(it)
        else:
            others.append(it)
    kept = list(others)
    for code in sorted(by_face):
        members = by_face[code]
        gap, y = scan_face([it[0] for it in members], code)
        if gap < FULL_TOL:
            occupancy.before[code] = occupancy.states[code] = FULL
            kept.extend(members)
            covered = float(np.sum(_volumes([it[0] for it in members], g.cell)))
            if covered < (1.0 - 1e-6) * _face_measure(code, g.cell):
                # no hole at scan resolution although some area is missing
                unresolved.append(code)
            continue
        occupancy.before[code] = PARTIAL
        if not np.isfinite(gap):
            raise HoleNotFound(f"face {face_id(code)} has no scan points")
        # every piece lies at distance >= 2 delta from y, so Psi is the radial
        # projection from y onto the face boundary there: the image has no d-mass
        holes[code] = (y, 0.5 * gap)
        occupancy.states[code] = EMPTY
    if strict_holes and unresolved:
        raise HoleNotFound(f"{len(unresolved)} partial faces without a hole")
    image = _to_complex([it[0] for it in kept], g, d, n)

    def ratios(final_items):
        img_mass = np.zeros(len(base))
        vols = _volumes([it[0] for it in final_items], g.cell)
        np.add.at(img_mass, np.array([it[1] for it in final_items], dtype=np.intp), vols)
        num: dict[tuple, float] = defaultdict(float)
        den: dict[tuple, float] = defaultdict(float)
        for i in live:
            for cell in _region_cells(base_codes[i], g):
                num[cell] += img_mass[i]
                den[cell] += base_mass[i]
        return {c: num[c] / den[c] for c in den if den[c] > vol_floor}

    return GridDeformation(
        grid=g, dim=d, seed=seed, projected=projected, image=image, occupancy=occupancy,
        centers=centers, holes=holes, cell_ratios=ratios(kept), projection_ratios=ratios(projected_items),
        unresolved=unresolved,
    )


def ff_projection(K: Complex, g: Grid, seed: int = 0) -> Complex:
    """Push K onto the d-skeleton of Q1 u C2 (and the boundary of Q1 u C2) by face-wise radial projections."""
    return deform(K, g, seed).projected


def face_cleanup(K: Complex, g: Grid, seed: int = 0, strict: bool = False) -> tuple[Complex, FaceOccupancy]:
    """Empty every partially covered interior d-face of the core.

    ``K`` is expected to be a projection-stage output, so its pieces already
    lie on grid faces; pieces on higher-dimensional faces are left in place.
    """
    out = deform(K, g, seed, strict_holes=strict)
    return out.image, out.occupancy


def rect_deform(K: Complex, R: Rectangle, eps: float, seed: int = 0, center=None) -> GridDeformation:
    """Grid deformation on a grid of rectangles homothetic to R."""
    ratio = R.a / R.b
    if not 1.0 <= ratio <= 4.0:
        raise RatioOutOfRange(f"side ratio a/b = {ratio:.6g} outside [1, 4]")
    result = deform(K, build_grid(R, eps, center), seed)
    log.info("rectangle ratio %.4g: k1 = %.6g", ratio, result.k1)
    return result


def rect_variant(K: Complex, R: Rectangle, eps: float, seed: int = 0, center=None) -> Complex:
    return rect_deform(K, R, eps, seed, center).image


# ---------------------------------------------------------------------------
# k1 measurement


def random_patch(n: int, d: int, rng: np.random.Generator, size: float = 0.35, spread: float = 0.1) -> Complex:
    """A flat d-dimensional patch in a random d-plane of R^n near the origin.

    d = 1 gives a 4-segment polyline; d = 2 a square split into 8 triangles.
    """
    frame, _ = np.linalg.qr(rng.normal(size=(n, d)))
    frame = frame.T
    origin = rng.uniform(-spread, spread, size=n)
    if d == 1:
        t = np.linspace(-size / 2, size / 2, 5)
        pts = origin + t[:, None] * frame[0]
        return Complex(1, n, pts, np.array([[i, i + 1] for i in range(4)]))
    side = 2
    ticks = np.linspace(-size / 2, size / 2, side + 1)
    grid = np.array(list(product(*([ticks] * d))))
    pts = origin + grid @ frame
    from scipy.spatial import Delaunay

    simp = Delaunay(grid).simplices
    return Complex(d, n, pts, simp)


@dataclass
class K1Stats:
    n: int
    d: int
    fractions: tuple
    per_eps: dict  # fraction -> list of per-trial k1
    projection_per_eps: dict

    @property
    def maxima(self) -> dict:
        return {f: max(v) for f, v in self.per_eps.items()}

    @property
    def variation(self) -> float:
        """Relative spread (max - min) / min of the worst ratio across the eps sweep."""
        vals = list(self.maxima.values())
        return (max(vals) - min(vals)) / min(vals)

    @property
    def grows_with_refinement(self) -> bool:
        """True when the worst ratio increases monotonically as eps shrinks by more than 5%."""
        vals = [self.maxima[f] for f in sorted(self.fractions, reverse=True)]
        return all(b > a for a, b in zip(vals, vals[1:])) and self.variation >= 0.05

    def to_json(self) -> dict:
        return {
            "n": self.n, "d": self.d,
            "max_ratio": {str(f): v for f, v in self.maxima.items()},
            "quantiles": {str(f): np.quantile(v, [0.5, 0.9, 1.0]).tolist() for f, v in self.per_eps.items()},
            "variation": self.variation, "grows_with_refinement": self.grows_with_refinement,
        }


def measure_k1(n: int, d: int, trials: int, seed: int = 0, fractions=(1 / 8, 1 / 16, 1 / 32),
               edge: float = 1.0, complexes=None) -> K1Stats:
    """Worst per-cell mass ratio of the grid deformation over random patches and an eps sweep."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    if complexes is None:
        complexes = [random_patch(n, d, rng, size=0.35 * edge, spread=0.1 * edge) for _ in range(trials)]
    cube = Cube(np.zeros(n), edge)
    per, proj = {}, {}
    for f in fractions:
        g = build_grid(cube, f * edge)
        runs = [deform(K, g, seed + t) for t, K in enumerate(complexes)]
        per[f] = [r.k1 for r in runs]
        proj[f] = [r.projection_k1 for r in runs]
    return K1Stats(n, d, tuple(fractions), per, proj)


# ---------------------------------------------------------------------------
# property audit


@dataclass
class PropertyReport:
    """Outcome of checking the deformation properties (1) to (5) on one run."""

    checks: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    max_gap: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks[name] = self.checks.get(name, True) and bool(passed)
        if not passed:
            self.failures.append(f"{name}: {detail}")


def _sample_complex(K: Complex, rng: np.random.Generator, count: int) -> np.ndarray:
    if K.is_empty:
        return np.zeros((0, K.ambient))
    w = rng.dirichlet(np.ones(K.dim + 1), size=count)
    idx = rng.integers(0, len(K.simplices), size=count)
    return np.concatenate([K.vertices[np.unique(K.simplices)], np.einsum("pk,pkn->pn", w, K.points()[idx])])


def _sample_skeleton(g: Grid, d: int, rng: np.random.Generator, count: int) -> np.ndarray:
    """Random points on random d-faces of Q1 u C2, built exactly on the lattice planes."""
    n = g.n
    out = np.empty((count, n))
    for row in range(count):
        free = rng.choice(n, size=d, replace=False)
        u = np.array([rng.integers(l, h + 1) for l, h in zip(g.lo, g.hi)], dtype=float)
        for i in free:
            u[i] = rng.integers(g.lo[i], g.hi[i]) + rng.random()
        out[row] = u
    return out


def check_properties(K: Complex, res: GridDeformation, rng: np.random.Generator | None = None,
                     n_samples: int = 200, tol: float = SNAP) -> PropertyReport:
    """Check properties (1) to (5) of the deformation on samples and on the output complexes.

    ``tol`` is in lattice units, i.e. a fraction of the cell edge.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    g, d = res.grid, res.dim
    rep = PropertyReport()
    lo, hi = g.lo.astype(float), g.hi.astype(float)

    # (1) identity outside the open region Q1 u C2
    pts = _sample_complex(K, rng, n_samples)
    u = g.to_lattice(pts)
    outside = np.any((u <= lo + tol) | (u >= hi - tol), axis=1)
    if outside.any():
        img = res.map_points(pts[outside])
        rep.record("1_identity_outside", np.array_equal(img, pts[outside]),
                   f"{int(np.sum(np.any(img != pts[outside], axis=1)))} points moved")
    else:
        rep.record("1_identity_outside", True)

    # (2) identity on the d-skeleton (projection stage everywhere, full map off the emptied faces)
    sk = _sample_skeleton(g, d, rng, n_samples)
    x = g.from_lattice(sk)
    moved = res.project_points(x)
    rep.record("2_skeleton_fixed", np.allclose(g.to_lattice(moved), sk, rtol=0, atol=tol),
               "projection moved a skeleton point")
    codes = _classify_many(_snap(sk)[:, None, :])
    keep = np.array([c not in res.holes for c in codes])
    if keep.any():
        full = res.map_points(x[keep])
        rep.record("2_skeleton_fixed", np.allclose(g.to_lattice(full), sk[keep], rtol=0, atol=tol),
                   "cleanup moved a point of a face it keeps")

    # (3) the image lies on the d-skeleton or the boundary of Q1 u C2 (or outside it)
    for stage, C in (("projected", res.projected), ("image", res.image)):
        if C.is_empty:
            continue
        P = _snap(g.to_lattice(C.points()))
        const = np.all(np.abs(P - P[:, :1]) <= tol, axis=1) & np.all(np.abs(P - np.rint(P)) <= tol, axis=1)
        on_skel = const.sum(axis=1) >= g.n - d
        beyond = np.any(np.all(P <= lo + tol, axis=1) | np.all(P >= hi - tol, axis=1), axis=1)
        bad = ~(on_skel | beyond)
        rep.record("3_image_on_skeleton", not bad.any(), f"{int(bad.sum())} {stage} simplices off the skeleton")

    # (4) every face of Q1 u C2 is mapped into itself
    inside = ~outside
    if inside.any():
        u_in = _snap(u[inside])
        img = _snap(g.to_lattice(res.map_points(pts[inside])))
        lower = np.where(np.abs(u_in - np.rint(u_in)) == 0, u_in, np.floor(u_in))
        upper = np.where(np.abs(u_in - np.rint(u_in)) == 0, u_in, np.floor(u_in) + 1)
        ok = np.all((img >= lower - tol) & (img <= upper + tol), axis=1)
        rep.record("4_faces_invariant", bool(ok.all()), f"{int((~ok).sum())} points left their face")

    # (5) interior d-faces of the core are empty or fully covered
    if not res.image.is_empty:
        P = _snap(g.to_lattice(res.image.points()))
        groups: dict[tuple, list] = defaultdict(list)
        core_lo, core_hi = g.core_lo.tolist(), g.core_hi.tolist()
        for q, code in zip(P, _classify_many(P)):
            if face_dim(code) == d and _is_interior(code, core_lo, core_hi):
                groups[code].append(q)
        for code, members in groups.items():
            if float(np.sum(_volumes(members, g.cell))) <= 0:
                continue
            gap, _ = scan_face(members, code)
            extra = _face_random_gap(members, code, rng)
            gap = max(gap, extra)
            rep.max_gap = max(rep.max_gap, gap)
            rep.record("5_no_partial_faces", gap <= FULL_TOL, f"face {face_id(code)} has a gap {gap:.3g}")
        rep.checks.setdefault("5_no_partial_faces", True)
    return rep


def _face_random_gap(pieces: list[np.ndarray], code, rng: np.random.Generator, count: int = 256) -> float:
    lower, _ = face_bounds(code)
    free = np.flatnonzero(np.asarray(code) % 2 == 1)
    local = rng.random((count, len(free))) + lower[free]
    return float(distance_to_simplices(local, np.stack(pieces)[:, :, free]).max())
