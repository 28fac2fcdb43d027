import json
import math

import numpy as np
import pytest

from plateau.deform import (
    apply_move, bump_field, compose, cone_competitor, cone_parts, identity_move, lipschitz_estimate,
    move_from_json, puncture_projection, radial_cone_map, squeeze_map, vertex_field_move,
)
from plateau.geometry import Ball, Complex, Cube, mass
from plateau.shapes import disk, square


def test_radial_cone_examples():
    x0 = np.array([0.3, -0.2, 0.1])
    r, s = 0.8, 0.4
    m = radial_cone_map(x0, r, s)
    u = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(m(x0 + (1 - s) * r / 2 * u), x0)
    np.testing.assert_allclose(m(x0 + r * (1 - s / 2) * u), x0 + r / 2 * u)
    y = x0 + 2 * r * u
    assert np.array_equal(m(y), y)


def test_squeeze_examples():
    r, eps = 1.0, 0.01
    m = squeeze_map(r, eps, d=2, n=3)
    x = np.array([0.2, -0.3, 0.02])  # |x'| <= r(1-sqrt eps)/2 = 0.45, |x''| <= 3 eps r
    np.testing.assert_allclose(m(x), [0.2, -0.3, 0.0])
    y = np.array([0.6, 0.0, 0.1])
    assert np.array_equal(m(y), y)


def test_squeeze_is_continuous_across_its_boundary():
    m = squeeze_map(1.0, 0.02, d=2, n=4)
    rng = np.random.default_rng(0)
    p = rng.uniform(-0.5, 0.5, size=(2000, 4))
    p[:, 2] = 0.5 - 1e-9  # just inside the transverse face
    np.testing.assert_allclose(m(p), p, atol=1e-8)


def test_puncture_examples():
    r, side = 1.0, 0.9
    yp = np.array([0.1, -0.05])
    m = puncture_projection(yp, 0.05, r, d=2, n=3, side=side)
    assert np.allclose(m(np.array([0.1, -0.05, 0.0])), [0.1, -0.05, 0.0])
    x = np.array([0.3, 0.2, 0.0])
    img = m(x)
    assert np.abs(img[:2]).max() == pytest.approx(side / 2)
    assert img[2] == 0.0
    z = np.array([0.3, 0.2, r / 3])
    assert np.array_equal(m(z), z)


@pytest.mark.parametrize("make", [
    lambda: radial_cone_map([0.1, 0.2, 0.3], 0.5, 0.3),
    lambda: squeeze_map(0.6, 0.01, 2, 3, center=[0.1, 0, 0]),
    lambda: puncture_projection([0.0, 0.0], 0.1, 0.6, 2, 3, side=0.5),
    lambda: vertex_field_move(bump_field([0, 0, 0], 0.4, [0, 0, 1.0]), 0.1, Ball(np.zeros(3), 0.4)),
    lambda: compose(radial_cone_map([0.1, 0.2, 0.3], 0.5, 0.3), squeeze_map(0.6, 0.01, 2, 3)),
])
def test_support_invariant(make):
    m = make()
    rng = np.random.default_rng(1)
    c, R = m.support.center, m.support.radius
    dirs = rng.normal(size=(10_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = c + dirs * (R * (1 + rng.uniform(1e-9, 2.0, size=(10_000, 1))))
    assert np.array_equal(m(pts), pts)


def test_lipschitz_examples():
    box = Cube(np.zeros(3), 1.0)
    assert lipschitz_estimate(identity_move(3), box, 1000, seed=0) == pytest.approx(1.0)
    from plateau.deform import DeformationMove
    double = DeformationMove("composite", lambda p: 2 * p, Ball(np.zeros(3), 10.0))
    assert lipschitz_estimate(double, box, 1000, seed=0) >= 2 - 1e-6
    L = lipschitz_estimate(squeeze_map(1.0, 0.01, 2, 3), box, 200_000, seed=0)
    assert 1.0 <= L <= 1.5
    assert lipschitz_estimate(squeeze_map(1.0, 0.01, 2, 3), box, 1000, seed=3) == \
        lipschitz_estimate(squeeze_map(1.0, 0.01, 2, 3), box, 1000, seed=3)


def test_apply_identity_and_fixed_set():
    K = square(3)
    assert mass(apply_move(K, identity_move(3), 1.0)) == pytest.approx(mass(K))
    flat = square(4, ambient=3, size=0.2, origin=[-0.1, -0.1, 0])
    out = apply_move(flat, squeeze_map(1.0, 0.01, 2, 3), 1.0)
    np.testing.assert_array_equal(out.vertices, flat.vertices)


def test_radial_cone_move_on_flat_disk_tends_to_cone_mass():
    K = disk(0.1, 3)
    K = K.with_vertices(K.vertices * 2)
    r = 1.0
    m = radial_cone_map(np.zeros(3), r, 0.5)
    out = apply_move(K, m, 0.02)
    inside = mass(out) - (4 * math.pi - math.pi)  # subtract the untouched annulus (exactly flat)
    parts = cone_parts(K, Ball(np.zeros(3), r + 1e-7))
    assert inside == pytest.approx((r / 2) * mass(parts.slice), rel=0.02)


def test_cone_competitor_flat_disk_area():
    K = disk(0.05, 3)
    K = K.with_vertices(K.vertices * 1.5)
    C = cone_competitor(K, Ball(np.zeros(3), 1.0 + 1e-7))
    parts = cone_parts(K, Ball(np.zeros(3), 1.0 + 1e-7))
    assert mass(parts.cone) == pytest.approx(math.pi, rel=2e-3)
    assert mass(C) == pytest.approx(mass(K), rel=2e-3)


def test_cone_competitor_empty_slice():
    # a small flat piece strictly inside the ball: slice empty, the cone has no mass
    K = square(2, size=0.2, origin=[-0.1, -0.1, 0])
    C = cone_competitor(K, Ball(np.zeros(3), 1.0))
    assert mass(C) == 0.0


def test_cone_mass_bounded_by_slice():
    for h in (0.2, 0.1):
        K = disk(h, 3, height=lambda xy: 0.2 * np.sin(3 * xy[:, 0]))
        K = K.with_vertices(K.vertices * 1.7)
        p = cone_parts(K, Ball(np.zeros(3), 1.0 + 1e-7))
        assert mass(p.cone) <= (1.0 / 2) * mass(p.slice) + 1e-12


def test_move_json_roundtrip():
    m = compose(radial_cone_map([0.1, 0.2, 0.3], 0.5, 0.3), squeeze_map(0.6, 0.01, 2, 3))
    desc = json.loads(json.dumps(m.to_json()))
    m2 = move_from_json(desc)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(100, 3))
    np.testing.assert_array_equal(m(pts), m2(pts))
