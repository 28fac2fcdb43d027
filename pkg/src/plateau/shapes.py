"""Mesh builders for common test geometries."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import Delaunay

from .geometry import Complex


def polyline(points, closed: bool = False) -> Complex:
    pts = np.asarray(points, dtype=float)
    m = len(pts)
    idx = [(i, i + 1) for i in range(m - 1)]
    if closed:
        idx.append((m - 1, 0))
    return Complex(1, pts.shape[1], pts, np.array(idx, dtype=np.intp).reshape(-1, 2))


def _frame(ambient: int, basis) -> np.ndarray:
    if basis is None:
        basis = np.eye(ambient)[:2]
    b = np.asarray(basis, dtype=float)
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def circle(center, radius: float, segments: int = 64, basis=None) -> Complex:
    """Closed polygon with vertices on a circle in the plane spanned by ``basis``."""
    center = np.asarray(center, dtype=float)
    b = _frame(len(center), basis)
    t = 2 * np.pi * np.arange(segments) / segments
    pts = center + radius * (np.cos(t)[:, None] * b[0] + np.sin(t)[:, None] * b[1])
    return polyline(pts, closed=True)


def sphere(center, radius: float, basis, level: int = 2) -> Complex:
    """Triangulated k-sphere, k = len(basis) - 1, in the affine span of ``basis``.

    k = 1 gives a polygon, k = 2 a subdivided octahedron; higher k use the
    boundary of the cross-polytope.
    """
    center = np.asarray(center, dtype=float)
    b = np.asarray(basis, dtype=float)
    k = len(b) - 1
    if k == 1:
        return circle(center, radius, segments=8 * 2 ** level, basis=b)
    # boundary of the cross-polytope in R^{k+1}
    m = k + 1
    verts = np.concatenate([np.eye(m), -np.eye(m)])
    faces = []
    for signs in range(2 ** m):
        faces.append([i if not (signs >> i) & 1 else i + m for i in range(m)])
    verts = list(verts)
    faces = [tuple(f) for f in faces]
    if k == 2:
        for _ in range(level):
            mids: dict = {}

            def mid(a, c):
                key = (min(a, c), max(a, c))
                if key not in mids:
                    p = verts[a] + verts[c]
                    verts.append(p / np.linalg.norm(p))
                    mids[key] = len(verts) - 1
                return mids[key]

            new = []
            for a, bb, c in faces:
                ab, bc, ca = mid(a, bb), mid(bb, c), mid(c, a)
                new += [(a, ab, ca), (ab, bb, bc), (ca, bc, c), (ab, bc, ca)]
            faces = new
    local = np.array(verts)
    local /= np.linalg.norm(local, axis=1, keepdims=True)
    pts = center + radius * local @ b
    return Complex(k, len(center), pts, np.array(faces, dtype=np.intp))


def disk_2d(h: float, boundary_segments: int | None = None, radius: float = 1.0):
    """Delaunay triangulation of a disk with ``boundary_segments`` vertices on the rim.

    Returns (points (V,2), triangles (T,3), boundary vertex ids).
    """
    nb = boundary_segments or max(8, int(round(2 * np.pi * radius / h)))
    rings = max(1, int(round(radius / h)))
    pts = [np.zeros(2)]
    for k in range(1, rings):
        rho = radius * k / rings
        m = max(6, int(round(2 * np.pi * rho / h)))
        t = 2 * np.pi * (np.arange(m) + 0.5 * (k % 2)) / m
        pts.extend(np.stack([rho * np.cos(t), rho * np.sin(t)], axis=1))
    t = 2 * np.pi * np.arange(nb) / nb
    bpts = np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)
    start = len(pts)
    pts.extend(bpts)
    pts = np.array(pts)
    tri = Delaunay(pts).simplices
    # drop slivers on the convex hull
    a = pts[tri]
    u, w = a[:, 1] - a[:, 0], a[:, 2] - a[:, 0]
    area = 0.5 * np.abs(u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])
    tri = tri[area > 1e-12]
    return pts, np.sort(tri, axis=1), np.arange(start, start + nb)


def disk(h: float, ambient: int = 3, boundary_segments: int | None = None, height=None) -> Complex:
    """Unit disk in the x1x2-plane of R^n; ``height(xy) -> (V, n-2)`` lifts it."""
    pts2, tri, _ = disk_2d(h, boundary_segments)
    pts = np.zeros((len(pts2), ambient))
    pts[:, :2] = pts2
    if height is not None:
        pts[:, 2:] = np.asarray(height(pts2), dtype=float).reshape(len(pts2), ambient - 2)
    return Complex(2, ambient, pts, tri)


def square(n_side: int = 1, ambient: int = 3, size: float = 1.0, origin=None) -> Complex:
    """Axis-aligned square [0,size]^2 x {0} split into 2*n_side^2 triangles."""
    g = np.linspace(0.0, size, n_side + 1)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.zeros(((n_side + 1) ** 2, ambient))
    pts[:, 0] = xx.ravel()
    pts[:, 1] = yy.ravel()
    if origin is not None:
        pts += np.asarray(origin, dtype=float)
    tri = []
    for i in range(n_side):
        for j in range(n_side):
            a = i * (n_side + 1) + j
            b, c, dd = a + 1, a + n_side + 1, a + n_side + 2
            tri += [(a, c, dd), (a, dd, b)]
    return Complex(2, ambient, pts, np.array(tri, dtype=np.intp))


def equilateral_triangle(side: float = 1.0) -> np.ndarray:
    """Vertices of an equilateral triangle centred at the origin."""
    R = side / math.sqrt(3)
    t = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    return np.stack([R * np.cos(t), R * np.sin(t)], axis=1)
