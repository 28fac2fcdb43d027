"""Pure-numpy versions of the hot mass kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``PLATEAU_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import math
from itertools import combinations

import numpy as np

DEGENERATE_REL = 1e-12


def _edges(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    p = vertices[simplices]  # (S, d+1, n)
    return p[:, 1:, :] - p[:, :1, :]


def _longest_edge(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    p = vertices[simplices]
    k = simplices.shape[1]
    best = np.zeros(len(simplices))
    for i in range(k):
        for j in range(i + 1, k):
            best = np.maximum(best, np.linalg.norm(p[:, i] - p[:, j], axis=1))
    return best


def simplex_volumes(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    vertices = np.asarray(vertices, dtype=float)
    simplices = np.asarray(simplices, dtype=np.intp)
    if simplices.size == 0:
        return np.zeros(len(simplices))
    d = simplices.shape[1] - 1
    if d == 0:
        return np.ones(len(simplices))
    e = _edges(vertices, simplices)
    gram = np.einsum("sik,sjk->sij", e, e)
    det = np.linalg.det(gram)
    vol = np.sqrt(np.clip(det, 0.0, None)) / math.factorial(d)
    vol[vol < DEGENERATE_REL * _longest_edge(vertices, simplices) ** d] = 0.0
    return vol


def mass_gradient(vertices: np.ndarray, simplices: np.ndarray):
    """Return (mass, gradient) of the summed simplex volumes."""
    vertices = np.asarray(vertices, dtype=float)
    simplices = np.asarray(simplices, dtype=np.intp)
    grad = np.zeros_like(vertices)
    if simplices.size == 0:
        return 0.0, grad
    d = simplices.shape[1] - 1
    if d == 0:
        return float(len(simplices)), grad
    e = _edges(vertices, simplices)
    gram = np.einsum("sik,sjk->sij", e, e)
    vol = simplex_volumes(vertices, simplices)
    live = vol > 0
    g_e = np.zeros_like(e)
    if live.any():
        sol = np.linalg.solve(gram[live], e[live])  # G^{-1} E
        g_e[live] = vol[live, None, None] * sol
    # scatter in simplex order so the sum is deterministic
    np.add.at(grad, simplices[:, 1:].ravel(), g_e.reshape(-1, vertices.shape[1]))
    np.add.at(grad, simplices[:, 0], -g_e.sum(axis=1))
    return float(vol.sum()), grad


# ---------------------------------------------------------------------------
# central projection of pieces of a grid face onto the face boundary

SNAP = 1e-9


def snap(u: np.ndarray) -> np.ndarray:
    """Put coordinates within SNAP of an integer exactly on it."""
    r = np.rint(u)
    return np.where(np.abs(u - r) < SNAP, r, u)


def split_simplex(p: np.ndarray, v: np.ndarray, neg: list, pos: list, coord: int | None = None,
                  value: float = 0.0) -> None:
    """Split simplex ``p`` (rows are vertices) along the zero set of a linear function with vertex values ``v``.

    Pieces with no positive value go to ``neg``, the others to ``pos``. Crossing
    points interpolate from the negative to the positive endpoint, so a shared
    edge is cut at the same point from every simplex containing it.
    """
    stack = [(p, v)]
    while stack:
        p, v = stack.pop()
        isneg, ispos = v < 0, v > 0
        if not ispos.any():
            neg.append(p)
            continue
        if not isneg.any():
            pos.append(p)
            continue
        a, b = int(np.argmax(isneg)), int(np.argmax(ispos))
        t = v[a] / (v[a] - v[b])
        m = p[a] + t * (p[b] - p[a])
        if coord is not None:
            m[coord] = value
        p1, v1 = p.copy(), v.copy()
        p1[b], v1[b] = m, 0.0
        p2, v2 = p.copy(), v.copy()
        p2[a], v2[a] = m, 0.0
        stack.append((p2, v2))
        stack.append((p1, v1))


def pyramid_functions(c: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Facets of the box [lower, upper] (free axes only) as (axis, bound, 1 / (bound - c_axis)).

    The pyramid scale of u about c is max_j (u[axis_j] - c[axis_j]) * inv_j.
    """
    ax, bd = [], []
    for i in np.flatnonzero(lower != upper):
        ax += [i, i]
        bd += [upper[i], lower[i]]
    ax = np.array(ax, dtype=np.intp)
    bd = np.array(bd, dtype=float)
    return ax, bd, 1.0 / (bd - c[ax])


def pyramid_split(p: np.ndarray, c: np.ndarray, ax, inv) -> list:
    """Split ``p`` so that on each part a single pyramid function is the maximum."""
    out = []
    stack = [p]
    budget = 100_000
    while stack:
        q = stack.pop()
        S = (q[:, ax] - c[ax]) * inv
        top = S.max(axis=1)
        tol = 1e-12 * max(1.0, float(np.abs(top).max()))
        ok = np.all(S >= top[:, None] - tol, axis=0)
        if ok.any():
            out.append((q, int(np.argmax(ok))))
            continue
        a = int(np.argmax(S[0]))
        while True:
            w = int(np.flatnonzero(S[:, a] < top - tol)[0])
            bf = int(np.argmax(S[w]))
            v = S[:, a] - S[:, bf]
            v[np.abs(v) <= tol] = 0.0
            if (v > 0).any():
                break
            # bf dominates a on the whole piece, so it is maximal wherever a was
            a = bf
        budget -= 1
        if budget < 0:
            raise RuntimeError("pyramid split did not terminate")
        neg, pos = [], []
        split_simplex(q, v, neg, pos)
        stack.extend(neg)
        stack.extend(pos)
    return out


def project_pieces(pieces: np.ndarray, c: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Central projection from ``c`` of simplices in the box face [lower, upper] onto its boundary.

    ``pieces`` is (P, k+1, n) in lattice units. Each piece is split along the
    pyramid boundaries and every part is mapped vertex-wise, which is exact
    because the projection is projective on each pyramid. Returns the image
    parts (Q, k+1, n) and, for each, the index of the piece it came from.
    """
    pieces = np.asarray(pieces, dtype=float)
    c = np.asarray(c, dtype=float)
    ax, bd, inv = pyramid_functions(c, lower, upper)
    out, owner = [], []
    for idx, p in enumerate(pieces):
        for q, j in pyramid_split(p, c, ax, inv):
            s = (q[:, ax[j]] - c[ax[j]]) * inv[j]
            img = c + (q - c) / s[:, None]
            stay = s >= 1.0 - 1e-12
            img[stay] = q[stay]
            img = np.clip(img, lower, upper)
            img[:, ax[j]] = bd[j]
            out.append(snap(img))
            owner.append(idx)
    shape = (len(out),) + pieces.shape[1:]
    return (np.array(out, dtype=float).reshape(shape), np.array(owner, dtype=np.intp))


def distance_to_simplices(points: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Distance from each point to the union of a stack of simplices.

    ``points`` is (p, n) and ``simplices`` is (m, k+1, n). The closest point of
    a simplex lies in the relative interior of one of its faces, where it is
    the orthogonal projection onto that face's affine hull. Taking the minimum
    over all affinely independent vertex subsets whose projection has
    nonnegative barycentric coordinates is therefore exact.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    S = np.asarray(simplices, dtype=float)
    if S.ndim == 2:
        S = S[None]
    best = np.full(len(P), np.inf)
    if len(S) == 0 or len(P) == 0:
        return best
    k1 = S.shape[1]
    for size in range(1, k1 + 1):
        for sub in combinations(range(k1), size):
            V = S[:, list(sub)]  # (m, s, n)
            v0 = V[:, 0]
            diff = P[None, :, :] - v0[:, None, :]  # (m, p, n)
            if size == 1:
                dist = np.linalg.norm(diff, axis=2)
                best = np.minimum(best, dist.min(axis=0))
                continue
            E = V[:, 1:] - v0[:, None, :]  # (m, s-1, n)
            G = np.einsum("mij,mkj->mik", E, E)
            scale = np.einsum("mii->m", G)
            det = np.linalg.det(G)
            ok = det > 1e-24 * np.maximum(scale, 1e-300) ** (size - 1)
            if not ok.any():
                continue
            E, G, diff = E[ok], G[ok], diff[ok]
            rhs = np.einsum("mij,mpj->mip", E, diff)
            lam = np.linalg.solve(G, rhs)  # (m, s-1, p)
            inside = np.all(lam >= 0, axis=1) & (lam.sum(axis=1) <= 1)
            foot = np.einsum("mip,mij->mpj", lam, E)
            dist = np.linalg.norm(diff - foot, axis=2)
            dist[~inside] = np.inf
            best = np.minimum(best, dist.min(axis=0))
    return best
