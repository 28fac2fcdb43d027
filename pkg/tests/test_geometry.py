import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plateau import kernels, _kernels_py
from plateau.errors import RadiusNotGeneric
from plateau.geometry import (
    Ball, Complex, OCCUPANCY, ball_mass, mass, refine, simplex_volume, sphere_slice,
    sphere_split, union,
)
from plateau.shapes import disk, polyline, square

from conftest import random_rotation


def test_simplex_volume_examples():
    assert simplex_volume([0, 1], np.array([[0.0, 0.0], [1.0, 0.0]])) == pytest.approx(1.0)
    tri3 = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    assert simplex_volume([0, 1, 2], tri3) == pytest.approx(0.5)
    tri4 = np.array([[0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0]], float)
    assert simplex_volume([0, 1, 2], tri4) == pytest.approx(0.5)
    assert simplex_volume([0, 1, 2], np.array([[0, 0], [1, 0], [2, 0]], float)) == 0.0


def test_mass_examples():
    assert mass(square(1)) == pytest.approx(1.0)
    assert mass(Complex.empty(2, 3)) == 0.0
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    twice = Complex(2, 3, tri, [[0, 1, 2], [0, 1, 2]])
    assert mass(twice) == pytest.approx(1.0)
    assert mass(twice.replace(mode=OCCUPANCY)) == pytest.approx(0.5)


def test_kernel_backends_agree(rng):
    for d, n in [(1, 2), (2, 3), (2, 4), (3, 5)]:
        V = rng.normal(size=(30, n))
        S = np.array([rng.choice(30, d + 1, replace=False) for _ in range(40)])
        from plateau import _kernels
        np.testing.assert_allclose(_kernels.simplex_volumes(V, S), _kernels_py.simplex_volumes(V, S), rtol=1e-12)
        m1, g1 = _kernels.mass_gradient(V, S)
        m2, g2 = _kernels_py.mass_gradient(V, S)
        assert m1 == pytest.approx(m2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, rtol=1e-9, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 2**31 - 1))
def test_volume_isometry_invariant(d, extra, seed):
    rng = np.random.default_rng(seed)
    n = d + extra
    pts = rng.normal(size=(d + 1, n))
    q = random_rotation(n, rng)
    moved = pts @ q.T + rng.normal(size=n)
    s = list(range(d + 1))
    assert abs(simplex_volume(s, pts) - simplex_volume(s, moved)) <= 1e-10 * max(1.0, simplex_volume(s, pts))


def test_mass_additive_over_disjoint_lists():
    a, b = square(2), square(3, origin=[5, 0, 0])
    assert mass(union(a, b)) == pytest.approx(mass(a) + mass(b), rel=1e-15)


def test_occupancy_le_mass(rng):
    K = square(3)
    assert mass(K.replace(mode=OCCUPANCY)) == pytest.approx(mass(K), rel=1e-15)
    doubled = union(K, K)
    assert mass(doubled.replace(mode=OCCUPANCY)) <= mass(doubled)


def test_refine_examples():
    K = square(1)
    R = refine(K, 0.25)
    assert mass(R) == pytest.approx(1.0, rel=1e-14)
    assert R.max_edge() <= 0.25
    fine = square(8)
    assert refine(fine, 1.0) is fine
    seg = polyline([[0.0, 0.0], [1.0, 0.0]])
    r = refine(seg, 0.3)
    assert len(r) == 4 and mass(r) == pytest.approx(1.0)
    assert np.allclose(r.vertices[:, 1], 0.0)


def test_refine_is_conforming():
    R = refine(square(2), 0.1)
    # every interior edge shared by exactly two triangles, boundary edges by one
    from collections import Counter
    c = Counter()
    for s in R.simplices:
        for i in range(3):
            for j in range(i + 1, 3):
                c[tuple(sorted((s[i], s[j])))] += 1
    assert set(c.values()) <= {1, 2}
    boundary = [e for e, k in c.items() if k == 1]
    blen = sum(np.linalg.norm(R.vertices[a] - R.vertices[b]) for a, b in boundary)
    assert blen == pytest.approx(4.0)


def test_sphere_slice_disk_circumference_converges():
    # oracle: exact circumference 2*pi of the unit circle
    errs = []
    for h in (0.2, 0.1, 0.05):
        K = disk(h, 3)
        K = K.with_vertices(K.vertices * 2.0)  # radius-2 disk so the unit sphere cuts inside
        slc, clip = sphere_slice(K, Ball(np.zeros(3), 1.0 + 1e-7))
        errs.append(abs(mass(slc) - 2 * math.pi))
    assert errs[2] < errs[0]
    assert errs[2] < 5e-3


def test_sphere_slice_trivial_cases():
    K = square(2, origin=[5, 5, 5])
    slc, clip = sphere_slice(K, Ball(np.zeros(3), 1.0))
    assert slc.is_empty and clip.is_empty
    seg = polyline([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    slc, clip = sphere_slice(seg, Ball(np.zeros(3), 1.0))
    assert len(slc) == 1
    assert np.allclose(slc.vertices[slc.simplices[0, 0]], [1.0, 0.0, 0.0])
    assert mass(clip) == pytest.approx(1.0)


def test_sphere_slice_rejects_nongeneric_radius():
    seg = polyline([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(RadiusNotGeneric):
        sphere_slice(seg, Ball(np.zeros(2), 1.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(1, 2), (2, 3), (2, 4), (3, 4)]))
def test_sphere_split_partitions_mass(seed, dn):
    d, n = dn
    rng = np.random.default_rng(seed)
    V = rng.uniform(-1.5, 1.5, size=(12, n))
    S = np.array([rng.choice(12, d + 1, replace=False) for _ in range(10)])
    K = Complex(d, n, V, S)
    sp = sphere_split(K, Ball(rng.uniform(-0.3, 0.3, n), 1.0 + rng.uniform(0, 0.2)))
    total = mass(sp.part("inside")) + mass(sp.part("outside"))
    assert abs(total - mass(K)) <= 1e-9 * mass(K)
    inside = sp.part("inside").compact()
    if not inside.is_empty:
        c = sp.part("inside")
        assert np.all(np.linalg.norm(c.vertices[np.unique(c.simplices)] - 0, axis=1) < 10)


def test_ball_mass_flat_plane_density_one():
    K = square(4, ambient=3, size=4.0, origin=[-2, -2, 0])
    for r in (0.05, 0.3, 1.0):
        m, r_eff = ball_mass(K, [0.1, 0.2, 0.0], r)
        assert m / (math.pi * r_eff**2) == pytest.approx(1.0, abs=5e-3)


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
