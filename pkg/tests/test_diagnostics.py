import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plateau import diagnostics as D
from plateau import shapes
from plateau.errors import RadiusNotGeneric
from plateau.geometry import Complex, union
from plateau.spanning import SpanningSpec


def tripod(arm=1.0, segments=8):
    """Three unit segments meeting at the origin at 120 degrees, in R^2."""
    verts = [[0.0, 0.0]]
    simps = []
    for k in range(3):
        a = 2 * math.pi * k / 3
        u = np.array([math.cos(a), math.sin(a)])
        prev = 0
        for j in range(1, segments + 1):
            verts.append(list(arm * j / segments * u))
            simps.append([prev, len(verts) - 1])
            prev = len(verts) - 1
    return Complex(1, 2, verts, simps)


def plane(n_side=8, ambient=3, size=2.0):
    origin = np.zeros(ambient)
    origin[:2] = -size / 2
    return shapes.square(n_side, ambient, size=size, origin=origin)


def graph(f, n_side=40, size=2.0):
    K = plane(n_side, 3, size)
    V = K.vertices.copy()
    V[:, 2] = f(V[:, 0], V[:, 1])
    return K.with_vertices(V)


def crossing_planes_r4(n_side=8):
    a = plane(n_side, 4)
    b = a.with_vertices(a.vertices[:, [2, 3, 0, 1]])
    return union(a, b).merge_vertices()


# ---------------------------------------------------------------------------
# density


def test_unit_ball_volumes():
    assert D.omega(1) == pytest.approx(2.0)
    assert D.omega(2) == pytest.approx(math.pi)
    assert D.omega(3) == pytest.approx(4 * math.pi / 3)


def test_triple_junction_density_is_three_halves():
    K = tripod()
    assert D.density(K, [0.0, 0.0], 0.3) == pytest.approx(1.5, abs=1e-14)
    assert D.density(K, [0.5, 0.0], 0.2) == pytest.approx(1.0, abs=1e-14)


def test_flat_plane_density_is_one_within_mesh_tolerance():
    K = plane()
    for x, r in [([0.013, 0.021, 0.0], 0.5), ([0.3, -0.2, 0.0], 0.37), ([0.0, 0.0, 0.0], 0.2 + 1e-6)]:
        assert D.density(K, x, r) == pytest.approx(1.0, abs=1e-3)


def test_plane_off_center_density_matches_disk_area():
    K = plane()
    # ball centred at height 0.3 meets the plane in a disk of radius 0.4
    assert D.density(K, [0.01, 0.02, 0.3], 0.5) == pytest.approx(0.16 / 0.25, abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.1, 0.6))
def test_density_is_scale_covariant(lam, a, b, r):
    K = plane(4)
    x = np.array([a, b, 0.05])
    try:
        base = D.density(K, x, r)
        scaled = D.density(K.with_vertices(lam * K.vertices), lam * x, lam * r)
    except RadiusNotGeneric:
        return
    assert scaled == pytest.approx(base, rel=1e-12, abs=1e-14)


def test_radius_reaching_boundary_is_rejected():
    spec = SpanningSpec(shapes.circle([0, 0, 0], 1.0, 64), [])
    with pytest.raises(ValueError):
        D.density(shapes.disk(0.2), [0.5, 0.0, 0.0], 0.6, spec)


def test_vertex_on_sphere_raises():
    K = plane(4)
    with pytest.raises(RadiusNotGeneric):
        D.density(K, [0.0, 0.0, 0.0], 0.5)


# ---------------------------------------------------------------------------
# monotonicity


def test_plane_profile_is_monotone():
    prof = D.monotonicity_profile(plane(), [0.013, 0.021, 0.0], D.dyadic_radii(0.9))
    assert prof.passed
    assert np.allclose(prof.densities, 1.0, atol=1e-3)


def test_wiggly_plane_profile_fails_monotonicity():
    K = graph(lambda x, y: 0.03 * np.sin(20 * x) * np.exp(-(x**2 + y**2) / 0.09))
    radii = [r * (1 + 1e-6) for r in D.dyadic_radii(0.9)]
    prof = D.monotonicity_profile(K, K.vertices[np.argmin(np.linalg.norm(K.vertices, axis=1))], radii)
    assert not prof.passed
    assert prof.worst_drop > D.MONO_TOL


def test_radii_must_increase():
    with pytest.raises(ValueError):
        D.monotonicity_profile(plane(), [0, 0, 0], [0.2, 0.1])


# ---------------------------------------------------------------------------
# unit density and singular set


def test_flat_disk_unit_density_passes():
    spec = SpanningSpec(shapes.circle([0, 0, 0], 1.0, 64), [])
    cert = D.unit_density_check(shapes.disk(0.1, boundary_segments=64), 40, 0.05, 0, spec)
    assert cert.passed and cert.details["fraction_within"] == 1.0


def test_doubled_sheet_fails_unit_density():
    a = plane()
    b = a.with_vertices(a.vertices + [0, 0, 0.01])
    cert = D.unit_density_check(union(a, b), 20, 0.1, 0)
    assert not cert.passed


def test_tripod_has_one_singular_candidate_of_dimension_zero():
    rep = D.singular_candidates(tripod(segments=20), r_min=0.1)
    assert len(rep.points) == 1
    assert np.allclose(rep.points[0], 0.0)
    assert rep.densities[0] == pytest.approx(1.5)
    assert rep.dimension == 0.0


def test_crossing_planes_in_r4_flag_the_crossing_point():
    rep = D.singular_candidates(crossing_planes_r4(), r_min=0.1)
    assert len(rep.points) == 1
    assert np.allclose(rep.points[0], 0.0)
    assert rep.densities[0] == pytest.approx(2.0, abs=1e-3)
    assert rep.dimension <= 2 - 1
    assert rep.certificate(2, 0.1).passed


def test_crossing_planes_in_r3_flag_a_line():
    a = plane(16)
    b = a.with_vertices(a.vertices[:, [0, 2, 1]])
    rep = D.singular_candidates(union(a, b).merge_vertices(), r_min=0.1)
    assert rep.flagged >= 10
    assert 0.5 <= rep.dimension <= 1.25
    assert rep.certificate(2, 0.1).passed


# ---------------------------------------------------------------------------
# stationarity and certificates


def test_flat_disk_is_stationary():
    spec = SpanningSpec(shapes.circle([0, 0, 0], 1.0, 64), [])
    cert = D.stationarity_check(shapes.disk(0.1, boundary_segments=64), spec)
    assert cert.passed and cert.details["fields"] == 20


def test_bumped_disk_is_not_stationary():
    spec = SpanningSpec(shapes.circle([0, 0, 0], 1.0, 64), [])
    K = shapes.disk(0.1, boundary_segments=64)
    V = K.vertices.copy()
    V[:, 2] = 0.2 * np.clip(1 - np.sum(V[:, :2] ** 2, axis=1), 0, None)
    cert = D.stationarity_check(K.with_vertices(V), spec)
    assert not cert.passed
    assert cert.details["worst_rate"] < -1e-3


def test_audit_certificates_serialise():
    spec = SpanningSpec(shapes.circle([0, 0, 0], 1.0, 64), [])
    certs = D.audit(shapes.disk(0.1, boundary_segments=64), spec, samples=20)
    kinds = [c.kind for c in certs]
    assert kinds == [D.DENSITY_LOWER_BOUND, D.MONOTONICITY, D.UNIT_DENSITY, D.STATIONARITY, D.SINGULAR_SET]
    assert all(c.passed for c in certs)
    back = json.loads(json.dumps([c.to_json() for c in certs]))
    assert back[2]["verdict"] == "pass" and back[2]["samples"]
