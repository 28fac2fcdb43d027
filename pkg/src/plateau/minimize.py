"""Minimizing-sequence driver.

Candidates from a fixed menu of admissible moves are proposed, their mass
is verified, and a candidate is accepted only when it lowers the mass by at
least ``rel_tol * mass`` and the result still spans. Refinement to the stage
edge length is the only equal-mass edit and is declared as a remesh.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import grid as gridmod
from .deform import compose, cone_competitor, puncture_projection, squeeze_map
from .errors import (
    BoundaryMassNotGeneric, MeshFormatError, NotSpanning, SpanningLost, StageExhausted,
)
from .geometry import (
    Ball, Complex, Cube, _near_ball, ball_mass, box_mass, generic_radius, mass, mass_and_gradient, refine, union,
)
from . import kernels, shapes
from .meshio import read_json, read_mesh, write_json, write_mesh
from .spanning import SLIDING, SPANNING, SpanningSpec, TestSphere, spans

log = logging.getLogger(__name__)

GRADIENT, CONE, GRID, SQUEEZE, REMESH = "gradient", "cone", "grid", "squeeze", "remesh"
# h is the nominal edge length: remeshing splits only edges longer than MAX_EDGE * h
MAX_EDGE = 1.5
KIND_ORDER = {GRADIENT: 0, CONE: 1, GRID: 2, SQUEEZE: 3}


# ---------------------------------------------------------------------------
# problem description


@dataclass
class Tolerances:
    rel_tol: float = 1e-8
    # line-searched gradient steps only need to beat roundoff; see _select
    gradient_rel_tol: float = 1e-13
    stat_tol: float | None = None  # default 1e-4 * mass(K0) / diam(K0)
    max_iter: int = 3000
    memory: int = 8
    explore_every: int = 25
    cone_samples: int = 3
    squeeze_samples: int = 2
    max_step: float = 0.5  # largest vertex displacement of a gradient step, in units of h
    strict: bool = False

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "Tolerances":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class Stage:
    eps: float
    h: float


@dataclass(eq=False)
class Problem:
    K0: Complex
    spec: SpanningSpec
    schedule: tuple
    tol: Tolerances = field(default_factory=Tolerances)
    name: str = "problem"

    def __post_init__(self):
        self.schedule = tuple(s if isinstance(s, Stage) else Stage(float(s["eps"]), float(s["h"]))
                              for s in self.schedule)
        if not self.schedule:
            raise ValueError("schedule is empty")
        if any(s.eps <= 0 or s.h <= 0 for s in self.schedule):
            raise ValueError("stage scales must be positive")
        if self.K0.ambient != self.spec.ambient:
            raise ValueError("initial complex and boundary live in different spaces")
        if not math.isfinite(mass(self.K0)):
            raise ValueError("initial mass is not finite")

    @property
    def stat_tol(self) -> float:
        if self.tol.stat_tol is not None:
            return self.tol.stat_tol
        return 1e-4 * mass(self.K0) / max(self.K0.diameter(), 1e-300)

    def check(self) -> None:
        rep = spans(self.K0, self.spec)
        if not rep.ok:
            raise NotSpanning(f"initial complex misses tests {rep.failing}")


# ---------------------------------------------------------------------------
# first variation


def _tau(K: Complex, H: Complex) -> float:
    pts = np.concatenate([K.vertices, H.vertices]) if len(H.vertices) else K.vertices
    if len(pts) == 0:
        return 0.0
    return 1e-9 * float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def boundary_vertices(K: Complex, spec: SpanningSpec | None) -> np.ndarray:
    """Mask of K's vertices that lie on H (within tau) or are tagged as on H."""
    mask = np.zeros(len(K.vertices), dtype=bool)
    if spec is None:
        return mask
    if not spec.H.is_empty and len(K.vertices):
        dist = kernels.distance_to_simplices(K.vertices, spec.H.points())
        mask |= dist <= _tau(K, spec.H)
    if spec.tags:
        mask[list(spec.tags)] = True
    return mask


def _tangent_projection(points: np.ndarray, grads: np.ndarray, H: Complex) -> np.ndarray:
    """Project each gradient onto the tangent space of the H simplex nearest its point."""
    out = np.zeros_like(grads)
    PH = H.points()
    for k, (x, g) in enumerate(zip(points, grads)):
        d_all = np.array([kernels.distance_to_simplices(x[None], PH[j][None])[0] for j in range(len(PH))])
        j = int(np.argmin(d_all))
        E = (PH[j, 1:] - PH[j, :1])
        if len(E) == 0:
            continue
        Q, _ = np.linalg.qr(E.T)
        out[k] = Q @ (Q.T @ g)
    return out


@dataclass
class Variation:
    field: np.ndarray  # (V, n)
    norm: float
    pinned: np.ndarray  # (V,) bool


def first_variation(K: Complex, spec: SpanningSpec | None = None) -> Variation:
    """Exact gradient of the polyhedral mass with respect to the vertex positions.

    In spanning mode vertices lying on H are boundary data and carry no
    variation; in sliding mode they keep the part tangent to H.
    """
    _, g = mass_and_gradient(K)
    pinned = boundary_vertices(K, spec)
    if pinned.any():
        if spec is not None and spec.mode == SLIDING and not spec.H.is_empty:
            idx = np.flatnonzero(pinned)
            g[idx] = _tangent_projection(K.vertices[idx], g[idx], spec.H)
        else:
            g[pinned] = 0.0
    return Variation(g, float(np.linalg.norm(g)), pinned)


# ---------------------------------------------------------------------------
# candidate moves


@dataclass
class Candidate:
    kind: str
    complex: Complex
    predicted: float
    params: dict = field(default_factory=dict)
    support: Ball | None = None
    topology_changed: bool = True


def _dist_to_H(points: np.ndarray, spec: SpanningSpec) -> np.ndarray:
    if spec.H.is_empty:
        return np.full(len(points), np.inf)
    return kernels.distance_to_simplices(np.atleast_2d(points), spec.H.points())


def _free_vertices(K: Complex, pinned: np.ndarray) -> np.ndarray:
    used = np.zeros(len(K.vertices), dtype=bool)
    used[np.unique(K.simplices)] = True
    return np.flatnonzero(used & ~pinned)


def cone_candidate(K: Complex, spec: SpanningSpec, x, r: float) -> Candidate | None:
    """K with K ∩ B(x, r) replaced by the cone from x over K ∩ ∂B(x, r).

    The radius is nudged to a generic value; None when the ball meets H.
    """
    x = np.asarray(x, dtype=float)
    dH = float(_dist_to_H(x, spec)[0])
    near = _near_ball(K, Ball(x, r))
    Kn = K.subset(near).compact()
    r = generic_radius(Kn, x, r)
    if r >= dH:
        return None
    ball = Ball(x, r)
    C = cone_competitor(Kn, ball)
    new = union(K.subset(~near), C).merge_vertices().drop_degenerate().compact()
    return Candidate(CONE, new, mass(new), {"x": x.tolist(), "r": r}, ball)


def cone_candidates(K: Complex, spec: SpanningSpec, stage: Stage, rng: np.random.Generator,
                    count: int, pinned: np.ndarray) -> list[Candidate]:
    """Cone competitors in balls centred at sampled free vertices, disjoint from H."""
    out = []
    free = _free_vertices(K, pinned)
    if not len(free) or K.dim == 0:
        return out
    for x_id in rng.choice(free, size=min(count, len(free)), replace=False):
        x = K.vertices[x_id]
        r = float(rng.uniform(2.0, 6.0)) * stage.h
        dH = float(_dist_to_H(x, spec)[0])
        if r >= 0.9 * dH:
            r = 0.5 * dH
        if r < stage.h:
            continue
        cand = cone_candidate(K, spec, x, r)
        if cand is not None:
            out.append(cand)
    return out


def _components(K: Complex) -> tuple[int, np.ndarray]:
    V = len(K.vertices)
    if K.dim == 0 or K.is_empty:
        return V, np.arange(V)
    S = K.simplices
    rows = np.repeat(S[:, 0], S.shape[1] - 1)
    cols = S[:, 1:].ravel()
    A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(V, V))
    return connected_components(A, directed=False)


def grid_candidates(K: Complex, spec: SpanningSpec, stage: Stage, pinned: np.ndarray,
                    seed: int, max_count: int = 4) -> list[Candidate]:
    """Grid deformation at the stage scale on cubes around small detached components.

    A component qualifies when its mass is below one cell face and it has no
    vertex on H; the cube keeps the component inside the core and stays away
    from H.
    """
    out: list[Candidate] = []
    if K.is_empty:
        return out
    ncomp, label = _components(K)
    if ncomp < 2:
        return out
    eps = stage.eps
    vols = kernels.simplex_volumes(K.vertices, K.simplices)
    comp_of_simplex = label[K.simplices[:, 0]]
    comp_mass = np.bincount(comp_of_simplex, weights=vols, minlength=ncomp)
    has_pin = np.zeros(ncomp, dtype=bool)
    if pinned.any():
        has_pin[np.unique(label[pinned])] = True
    small = [c for c in np.argsort(comp_mass) if comp_mass[c] > 0 and comp_mass[c] < eps ** K.dim and not has_pin[c]]
    for c in small[:max_count]:
        pts = K.vertices[np.unique(K.simplices[comp_of_simplex == c])]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        center = 0.5 * (lo + hi)
        edge = float((hi - lo).max()) + 8 * eps
        support = Ball(center, edge * math.sqrt(K.ambient) / 2)
        if float(_dist_to_H(center, spec)[0]) <= support.radius:
            continue
        g = gridmod.build_grid(Cube(center, edge), eps)
        boxlo, boxhi = center - edge / 2, center + edge / 2
        P = K.points()
        inside = np.all((P.max(axis=1) >= boxlo) & (P.min(axis=1) <= boxhi), axis=1)
        res = gridmod.deform(K.subset(inside).compact(), g, seed)
        rest = K.subset(~inside)
        new = rest if res.image.is_empty else union(rest, res.image)
        new = new.merge_vertices().drop_degenerate().compact()
        out.append(Candidate(GRID, new, mass(new), {"center": center.tolist(), "edge": edge, "eps": eps}, support))
    return out


def _local_frame(pts: np.ndarray, d: int) -> tuple[np.ndarray, float]:
    """Orthonormal frame whose first d rows fit the points, and the flatness ratio."""
    c = pts.mean(axis=0)
    _, s, Vt = np.linalg.svd(pts - c, full_matrices=True)
    sv = np.zeros(pts.shape[1])
    sv[: len(s)] = s
    flat = float(sv[d:].max() / max(sv[:d].min(), 1e-300)) if d < len(sv) else 0.0
    return Vt, flat


def squeeze_candidates(K: Complex, spec: SpanningSpec, stage: Stage, rng: np.random.Generator,
                       count: int, pinned: np.ndarray, flat_tol: float = 0.1) -> list[Candidate]:
    """Squeeze maps at near-flat sampled points; multi-sheet points also get the puncture."""
    out = []
    free = _free_vertices(K, pinned)
    d, n = K.dim, K.ambient
    if not len(free) or d == 0 or d == n:
        return out
    for x_id in rng.choice(free, size=min(count, len(free)), replace=False):
        x = K.vertices[x_id]
        r = float(rng.uniform(4.0, 8.0)) * stage.h
        if r * math.sqrt(n) / 2 >= float(_dist_to_H(x, spec)[0]):
            continue
        near = np.linalg.norm(K.vertices - x, axis=1) <= r / 2
        if near.sum() < d + 2:
            continue
        frame, flat = _local_frame(K.vertices[near], d)
        if flat > flat_tol:
            continue
        sq = squeeze_map(r, 0.05, d, n, center=x, frame=frame)
        move, params = sq, {"x": x.tolist(), "r": r, "punctured": False}
        m_loc, _ = ball_mass(K, x, r / 4, local_h=stage.h)
        omega = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        if m_loc / (omega * (r / 4) ** d) > 1.5:
            # several sheets through x: collapse them, then clear the plane part around x
            pu = puncture_projection(np.zeros(d), 0.1 * r, r, d, n, center=x, frame=frame)
            move, params = compose(sq, pu), dict(params, punctured=True)
        new = K.with_vertices(move(K.vertices)).drop_degenerate().compact()
        out.append(Candidate(SQUEEZE, new, mass(new), params, move.support, topology_changed=False))
    return out


def propose(K: Complex, spec: SpanningSpec, stage: Stage, rng: np.random.Generator,
            tol: Tolerances | None = None, seed: int = 0, direction: np.ndarray | None = None) -> list[Candidate]:
    """Menu of candidate moves at the current iterate.

    The gradient step uses ``direction`` (default steepest descent) with a
    backtracking line search; the others are cone competitors, grid
    deformations on small detached components, and squeeze maps.
    """
    tol = tol or Tolerances()
    var = first_variation(K, spec)
    out = []
    step = gradient_step(K, var, stage, tol, direction)
    if step is not None:
        out.append(step)
    out += cone_candidates(K, spec, stage, rng, tol.cone_samples, var.pinned)
    out += grid_candidates(K, spec, stage, var.pinned, seed)
    out += squeeze_candidates(K, spec, stage, rng, tol.squeeze_samples, var.pinned)
    return out


def gradient_step(K: Complex, var: Variation, stage: Stage, tol: Tolerances,
                  direction: np.ndarray | None = None) -> Candidate | None:
    """Armijo backtracking along ``direction`` (steepest descent by default)."""
    g = var.field
    p = -g if direction is None else direction
    slope = float(np.sum(g * p))
    if not slope < 0:
        p, slope = -g, -float(np.sum(g * g))
    if slope == 0:
        return None
    m0 = mass(K)
    vmax = float(np.linalg.norm(p, axis=1).max())
    t = min(1.0, tol.max_step * stage.h / vmax)
    V = K.vertices
    for _ in range(40):
        trial = K.with_vertices(V + t * p)
        m1 = mass(trial)
        if m1 <= m0 + 1e-4 * t * slope:
            return Candidate(GRADIENT, trial, m0 + t * slope, {"t": t}, None, topology_changed=False)
        t *= 0.5
    return None


# ---------------------------------------------------------------------------
# descent


@dataclass
class Trace:
    """Audit trail of a descent: accepted moves, final complex and summary."""

    problem: str
    seed: int
    iterates: list = field(default_factory=list)
    final: Complex | None = None
    converged: bool = False
    stationarity: float = math.inf
    stat_tol: float = 0.0
    complexes: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def masses(self) -> list[float]:
        return [e["mass_after"] for e in self.iterates]

    def to_json(self) -> dict:
        doc = {
            "problem": self.problem,
            "seed": self.seed,
            "iterates": self.iterates,
            "final_mass": mass(self.final) if self.final is not None else None,
            "converged": self.converged,
            "stationarity": self.stationarity,
            "stat_tol": self.stat_tol,
            "stats": self.stats,
        }
        doc["hash"] = self.hash()
        return doc

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.iterates, sort_keys=True).encode())
        if self.final is not None:
            h.update(np.ascontiguousarray(self.final.vertices).tobytes())
            h.update(np.ascontiguousarray(self.final.simplices).astype(np.int64).tobytes())
        return h.hexdigest()


def _entry(stage: int, it: int, kind: str, before: float, after: float, predicted: float,
           ok: bool, params: dict, gnorm: float) -> dict:
    return {"stage": stage, "iteration": it, "kind": kind, "mass_before": before, "mass_after": after,
            "predicted": predicted, "spans": ok, "params": params, "first_variation": gnorm}


class _LBFGS:
    def __init__(self, memory: int):
        self.memory = memory
        self.S: list[np.ndarray] = []
        self.Y: list[np.ndarray] = []

    def reset(self) -> None:
        self.S.clear()
        self.Y.clear()

    def update(self, s: np.ndarray, y: np.ndarray) -> None:
        sy = float(np.sum(s * y))
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            self.S.append(s)
            self.Y.append(y)
            if len(self.S) > self.memory:
                self.S.pop(0)
                self.Y.pop(0)

    def direction(self, g: np.ndarray) -> np.ndarray | None:
        if not self.S:
            return None
        q = g.ravel().copy()
        alpha = []
        for s, y in zip(reversed(self.S), reversed(self.Y)):
            a = float(np.sum(s * q)) / float(np.sum(y * s))
            alpha.append(a)
            q -= a * y
        s, y = self.S[-1], self.Y[-1]
        q *= float(np.sum(s * y)) / float(np.sum(y * y))
        for (s, y), a in zip(zip(self.S, self.Y), reversed(alpha)):
            b = float(np.sum(y * q)) / float(np.sum(y * s))
            q += (a - b) * s
        return -q.reshape(g.shape)


def _select(cands: list[Candidate], m0: float, spec: SpanningSpec, tol: Tolerances, stats: dict):
    """Largest verified decrease among spanning candidates; ties by move kind.

    Menu moves must gain rel_tol * mass. Gradient steps already satisfy the
    Armijo condition and only need a strict decrease above roundoff: near a
    critical point the whole remaining gap is O(|dM|^2 h), far below
    rel_tol * mass long before |dM| reaches stat_tol.
    """
    scored = []
    for c in cands:
        m1 = mass(c.complex)
        floor = tol.gradient_rel_tol if c.kind == GRADIENT else tol.rel_tol
        if not m0 - m1 > floor * m0:
            continue
        ok = spans(c.complex, spec).ok
        if c.support is not None and not _touches_H(c.support, spec):
            stats["off_H_checked"] = stats.get("off_H_checked", 0) + 1
            if not ok:
                stats["off_H_spanning_failures"] = stats.get("off_H_spanning_failures", 0) + 1
        if not ok:
            stats["rejected_not_spanning"] = stats.get("rejected_not_spanning", 0) + 1
            continue
        scored.append((-(m0 - m1), KIND_ORDER[c.kind], len(scored), c, m1))
    if not scored:
        return None, None
    scored.sort(key=lambda t: t[:3])
    return scored[0][3], scored[0][4]


def _touches_H(ball: Ball, spec: SpanningSpec) -> bool:
    return float(_dist_to_H(ball.center, spec)[0]) <= ball.radius


def descend(p: Problem, seed: int = 0, keep_complexes: bool = False) -> Trace:
    """Run the stages of ``p`` and return the trace of accepted moves."""
    p.check()
    tol = p.tol
    rng = np.random.default_rng(seed)
    trace = Trace(p.name, seed, stat_tol=p.stat_tol)
    stats: dict = {"off_H_checked": 0, "off_H_spanning_failures": 0, "rejected_not_spanning": 0}
    K = p.K0
    if keep_complexes:
        trace.complexes.append(K)
    stat_tol = p.stat_tol
    converged = False
    var = first_variation(K, p.spec)
    for si, stage in enumerate(p.schedule):
        R = refine(K, MAX_EDGE * stage.h)
        if R is not K:
            m0, m1 = mass(K), mass(R)
            K = R
            trace.iterates.append(_entry(si, 0, REMESH, m0, m1, m0, True, {"h": stage.h}, var.norm))
            if keep_complexes:
                trace.complexes.append(K)
        opt = _LBFGS(tol.memory)
        var = first_variation(K, p.spec)
        converged = False
        for it in range(1, tol.max_iter + 1):
            m0 = mass(K)
            direction = opt.direction(var.field)
            cands = []
            step = gradient_step(K, var, stage, tol, direction)
            if step is not None:
                cands.append(step)
            stalled = step is None or not m0 - mass(step.complex) > tol.gradient_rel_tol * m0
            explore = stalled or var.norm <= stat_tol or it % tol.explore_every == 0
            if explore:
                cands += cone_candidates(K, p.spec, stage, rng, tol.cone_samples, var.pinned)
                cands += grid_candidates(K, p.spec, stage, var.pinned, seed)
                cands += squeeze_candidates(K, p.spec, stage, rng, tol.squeeze_samples, var.pinned)
            best, m1 = _select(cands, m0, p.spec, tol, stats)
            if best is None and direction is not None:
                # the quasi-Newton direction failed: retry plain steepest descent
                opt.reset()
                step = gradient_step(K, var, stage, tol, None)
                best, m1 = _select([step] if step is not None else [], m0, p.spec, tol, stats)
            if best is None:
                if var.norm <= stat_tol:
                    converged = True
                break
            newK = best.complex
            if best.topology_changed:
                newK = refine(newK, MAX_EDGE * stage.h)
                opt.reset()
            new_var = first_variation(newK, p.spec)
            if not best.topology_changed:
                opt.update((newK.vertices - K.vertices).ravel(), (new_var.field - var.field).ravel())
            trace.iterates.append(_entry(si, it, best.kind, m0, mass(newK), best.predicted, True,
                                         best.params, new_var.norm))
            K, var = newK, new_var
            if keep_complexes:
                trace.complexes.append(K)
        else:
            converged = var.norm <= stat_tol
        if not converged and tol.strict:
            raise StageExhausted(f"stage {si} stopped with first variation {var.norm:.3g} > {stat_tol:.3g}")
    final = spans(K, p.spec)
    if not final.ok:
        raise SpanningLost(f"final iterate misses tests {final.failing}")
    trace.final = K
    trace.converged = converged
    trace.stationarity = var.norm
    trace.stats = stats
    log.info("%s: mass %.10g after %d moves, |dM| = %.3g", p.name, mass(K), len(trace.iterates), var.norm)
    return trace


# ---------------------------------------------------------------------------
# nested cube audit


@lru_cache(maxsize=None)
def measured_k1(n: int, d: int, trials: int = 5, seed: int = 0) -> float:
    """Largest projection-stage per-cell ratio over a small random sample and an eps sweep."""
    stats = gridmod.measure_k1(n, d, trials, seed)
    return float(max(max(v) for v in stats.projection_per_eps.values()))


@dataclass
class AuditStep:
    i: int
    l: float
    m: float
    ratio: float
    eps: float
    l_next: float
    m_next: float
    competitor_mass: float
    iii: bool
    iv: bool
    v: bool


@dataclass
class AuditReport:
    verdict: str  # empty | density_certified | contradiction_path | inconclusive
    beta: float
    k1: float
    k: float
    l0: float
    m0: float
    steps: list = field(default_factory=list)
    l_inf: float | None = None

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["steps"] = [asdict(s) for s in self.steps]
        return doc


def _cube_mass(K: Complex, x: np.ndarray, l: float, shrink: bool = False) -> tuple[float, float]:
    """Mass of K in Q_{x,l}, nudging l (down when ``shrink``) until the boundary carries none."""
    for k in range(12):
        lk = l * (1 - 1e-6 * k) if shrink else l * (1 + 1e-6 * k)
        m, b = box_mass(K, x - lk / 2, x + lk / 2)
        if b == 0.0:
            return m, lk
    raise BoundaryMassNotGeneric(f"cube of edge {l:.6g} at {x} has mass on its boundary")


def nested_cube_audit(K: Complex, x, l0: float, beta: float, k1: float | None = None,
                      spec: SpanningSpec | None = None, max_steps: int = 60, seed: int = 0) -> AuditReport:
    """Run the nested-cube induction for the lower density bound at x.

    Starting from Q_{x,l0}, each step covers Q_i by cubes of edge eps_i l_i
    with eps_i = (m_i^(1/d) / l_i) / (k beta), replaces the complex by its
    grid deformation (the competitor) and passes to the inner cube. The
    report records conditions (iii) ratio < beta, (iv) m_{i+1} <= (1-1/k1) m_i
    and (v) (1-4 eps_i) l_i >= l_{i+1} >= (1-6 eps_i) l_i at every step.
    """
    x = np.asarray(x, dtype=float)
    n, d = K.ambient, K.dim
    if spec is not None and not spec.H.is_empty:
        if box_mass(spec.H, x - l0 / 2, x + l0 / 2)[0] > 0 or np.any(
                np.all(np.abs(spec.H.vertices - x) <= l0 / 2, axis=1)):
            raise ValueError("audit cube meets the boundary H")
    if k1 is None:
        k1 = measured_k1(n, d)
    k = max(6.0, 6.0 / (1.0 - ((k1 - 1.0) / k1) ** (1.0 / d)))
    m, l = _cube_mass(K, x, l0)
    report = AuditReport("inconclusive", beta, k1, k, l, m)
    if m == 0.0:
        report.verdict = "empty"
        report.l_inf = l
        return report
    cur = K
    for i in range(max_steps):
        ratio = m ** (1.0 / d) / l
        if ratio >= beta:
            report.verdict = "density_certified" if i == 0 else "inconclusive"
            break
        eps = ratio / (k * beta)
        g = gridmod.build_grid(Cube(x, l), eps * l)
        core = float((g.core_hi - g.core_lo)[0] * g.cell[0])
        target = min(core, (1 - 4 * eps) * l)
        P = cur.points()
        box = np.all((P.max(axis=1) >= x - l / 2) & (P.min(axis=1) <= x + l / 2), axis=1)
        res = gridmod.deform(cur.subset(box).compact(), g, seed)
        rest = cur.subset(~box)
        nxt = rest if res.image.is_empty else union(rest, res.image).merge_vertices()
        comp, _ = _cube_mass(nxt, x, l)
        m_next, l_next = _cube_mass(nxt, x, target, shrink=True)
        step = AuditStep(
            i, l, m, ratio, eps, l_next, m_next, comp,
            iii=ratio < beta,
            iv=m_next <= (1 - 1 / k1) * m,
            v=(1 - 4 * eps) * l >= l_next >= (1 - 6 * eps) * l,
        )
        report.steps.append(step)
        cur, m, l = nxt, m_next, l_next
        if m == 0.0:
            report.verdict = "contradiction_path"
            report.l_inf = l
            break
    return report


# ---------------------------------------------------------------------------
# problem builders and files


def _star(center, ends, h: float, rng: np.random.Generator, wiggle: float) -> Complex:
    """Three polylines from ``center`` to ``ends`` with edge length <= h and transverse noise."""
    verts = [np.asarray(center, dtype=float)]
    edges = []
    for e in ends:
        e = np.asarray(e, dtype=float)
        L = float(np.linalg.norm(e - center))
        k = max(1, int(math.ceil(L / h * 1.5)))
        normal = np.array([-(e - center)[1], (e - center)[0]]) / L
        prev = 0
        for j in range(1, k + 1):
            t = j / k
            pt = center + t * (e - center)
            if j < k:
                pt = pt + wiggle * rng.uniform(-1, 1) * normal
            verts.append(pt)
            edges.append((prev, len(verts) - 1))
            prev = len(verts) - 1
    return Complex(1, 2, np.array(verts), np.array(edges, dtype=np.intp))


def steiner_problem(h: float = 0.05, seed: int = 0) -> Problem:
    """Three vertices of a unit equilateral triangle; initial tree is a wiggly off-centre star."""
    rng = np.random.default_rng(seed)
    T = shapes.equilateral_triangle(1.0)
    H = Complex(0, 2, T, np.arange(3).reshape(3, 1))
    tests = []
    for i, c in enumerate(T):
        tests.append(TestSphere(shapes.circle(c, 0.1, 32), f"small{i}"))
        tests.append(TestSphere(shapes.circle(c, 0.45, 64), f"large{i}"))
    K0 = _star(np.array([0.12, -0.07]), T, h, rng, 0.3 * h)
    return Problem(K0, SpanningSpec(H, tests), (Stage(0.25, h),), Tolerances(), "steiner")


def _linking_tests(ambient: int, radii=(0.0, 0.45, 0.85), angles: int = 3, outer: float = 1.5) -> list:
    """Closed (n-2)-spheres that link the unit circle of the x1x2-plane and cross the disk at given radii."""
    tests = []
    for a in radii:
        for j in range(angles if a > 0 else 1):
            th = 2 * math.pi * j / angles
            u = np.zeros(ambient)
            u[0], u[1] = math.cos(th), math.sin(th)
            basis = [u] + [np.eye(ambient)[k] for k in range(2, ambient)]
            center = 0.5 * (a + outer) * u
            R = 0.5 * (outer - a)
            mesh = shapes.sphere(center, R, np.array(basis), level=3 if ambient == 3 else 1)
            tests.append(TestSphere(mesh, f"link_a{a:g}_t{j}"))
    return tests


def disk_problem(h: float = 0.05, ambient: int = 3, seed: int = 0) -> Problem:
    """Unit circle in the x1x2-plane; initial surface is a dome over the disk."""
    nb = max(8, int(round(2 * np.pi / h)))
    H = shapes.circle(np.zeros(ambient), 1.0, nb)

    def height(xy):
        w = 1.0 - np.sum(xy ** 2, axis=1)
        cols = [0.3 * w]
        if ambient == 4:
            cols.append(0.2 * w * xy[:, 0])
        return np.stack(cols, axis=1)

    K0 = shapes.disk(h, ambient, boundary_segments=nb, height=height)
    tests = _linking_tests(ambient)
    name = "disk" if ambient == 3 else f"disk{ambient}"
    return Problem(K0, SpanningSpec(H, tests), (Stage(0.5, h),), Tolerances(), name)


PROBLEMS = {
    "steiner": lambda h=0.05, seed=0: steiner_problem(h, seed),
    "disk": lambda h=0.05, seed=0: disk_problem(h, 3, seed),
    "disk4": lambda h=0.05, seed=0: disk_problem(h, 4, seed),
}


def make_problem(name: str, h: float = 0.05, seed: int = 0) -> Problem:
    try:
        return PROBLEMS[name](h, seed)
    except KeyError as exc:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from exc


def save_problem(p: Problem, directory, seed: int = 0) -> Path:
    """Write the meshes and the problem JSON document; returns the JSON path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_mesh(directory / "initial.mesh", p.K0)
    write_mesh(directory / "boundary.mesh", p.spec.H)
    names = []
    for t in p.spec.tests:
        fname = f"test_{t.label}.mesh"
        write_mesh(directory / fname, t.mesh)
        names.append(fname)
    doc = {
        "name": p.name,
        "initial": "initial.mesh",
        "boundary": "boundary.mesh",
        "tests": names,
        "labels": [t.label for t in p.spec.tests],
        "mode": p.spec.mode,
        "delta": p.spec.delta,
        "tags": list(p.spec.tags),
        "schedule": [{"eps": s.eps, "h": s.h} for s in p.schedule],
        "seed": seed,
        "tolerances": p.tol.to_json(),
    }
    path = directory / "problem.json"
    write_json(path, doc)
    return path


def load_problem(path) -> tuple[Problem, int]:
    """Read a problem JSON document; mesh paths are relative to its directory."""
    path = Path(path)
    doc = read_json(path)
    base = path.parent
    try:
        K0 = read_mesh(base / doc["initial"])
        H = read_mesh(base / doc["boundary"])
        files = list(doc["tests"])
        labels = doc.get("labels") or [Path(f).stem for f in files]
        tests = [TestSphere(read_mesh(base / f), str(lab)) for f, lab in zip(files, labels)]
        spec = SpanningSpec(H, tests, doc.get("mode", SPANNING), float(doc.get("delta", 0.0)),
                            tuple(doc.get("tags", ())))
        schedule = [Stage(float(s["eps"]), float(s["h"])) for s in doc["schedule"]]
        tol = Tolerances.from_json(doc.get("tolerances", {}))
        return Problem(K0, spec, tuple(schedule), tol, doc.get("name", path.stem)), int(doc.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"bad problem file {path}: {exc}") from exc
