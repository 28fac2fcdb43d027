import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from plateau.errors import GridTooCoarse, RatioOutOfRange
from plateau.geometry import Complex, Cube, Rectangle, distance_to_simplices, mass
from plateau.grid import (
    EMPTY, FULL, PARTIAL, build_grid, check_properties, deform, face_cleanup, face_dim, face_interior, ff_projection,
    grid_from_json, measure_k1, random_patch, rect_deform, rect_variant,
)




def cube_grid(n, cells=5, eps=0.1):
    return build_grid(Cube(np.zeros(n), cells * eps), eps)


def test_one_dimensional_frames():
    g = cube_grid(1)
    assert g.counts() == {"total": 5, "C1": 2, "C2": 2, "Q1": 1}
    assert [g.layer([k]) for k in range(-2, 3)] == ["C1", "C2", "Q1", "C2", "C1"]


@pytest.mark.parametrize("n", [2, 3, 4])
def test_nested_cube_counts(n):
    c = cube_grid(n).counts()
    assert c["C1"] == 5 ** n - 3 ** n
    assert c["C2"] == 3 ** n - 1
    assert len(cube_grid(n).cells("C2")) == 3 ** n - 1


def test_core_side_for_seven_cells():
    g = build_grid(Cube(np.zeros(2), 1.0), 1 / 7)
    side = (g.core_hi - g.core_lo) * g.cell
    np.testing.assert_allclose(side, 3 / 7)


def test_one_cell_is_centred_at_the_center():
    c = np.array([0.3, -0.2])
    g = build_grid(Cube(c, 1.0), 0.1, center=c)
    np.testing.assert_allclose(g.from_lattice(np.array([0.5, 0.5])), c)


def test_too_coarse():
    with pytest.raises(GridTooCoarse):
        build_grid(Cube(np.zeros(2), 1.0), 0.4)


def test_face_tables():
    g = cube_grid(2)  # Q1 u C2 is 3 x 3 cells
    counts = {m: len(g.faces(m)[0]) for m in range(3)}
    assert counts == {0: 16, 1: 24, 2: 9}
    interior = {m: int(g.faces(m)[1].sum()) for m in range(3)}
    assert interior == {0: 4, 1: 12, 2: 9}
    assert all(face_dim(c) == 1 for c in g.faces(1)[0])


def test_grid_json_roundtrip():
    g = build_grid(Rectangle(np.zeros(3), 1.0, 0.5, 2), 0.1)
    h = grid_from_json(json.loads(json.dumps(g.to_json())))
    np.testing.assert_array_equal(g.cell, h.cell)
    np.testing.assert_array_equal(g.kmin, h.kmin)


def face_square(g, code):
    """Two triangles exactly covering the grid 2-face with doubled code ``code``."""
    code = np.asarray(code)
    lower, upper = code // 2, (code + 1) // 2
    free = np.flatnonzero(code % 2)
    corners = []
    for a, b in [(0, 0), (1, 0), (1, 1), (0, 1)]:
        p = lower.astype(float).copy()
        p[free[0]] += a
        p[free[1]] += b
        corners.append(g.from_lattice(p))
    return Complex(2, g.n, np.array(corners), np.array([[0, 1, 2], [0, 2, 3]]))


def half_face(g, code):
    K = face_square(g, code)
    return K.replace(simplices=K.simplices[:1])


def test_skeleton_complex_is_fixed():
    g = cube_grid(3, cells=7)
    K = face_square(g, (1, 1, 0))
    out = ff_projection(K, g, seed=0)
    assert mass(out) == pytest.approx(mass(K), rel=1e-12)
    assert np.max(distance_to_simplices(out.vertices, K.points())) < 1e-12


def test_tiny_simplex_lands_on_its_cell_skeleton():
    g = cube_grid(3, cells=7)
    cell_lo = g.from_lattice(np.zeros(3))
    tri = cell_lo + g.eps * np.array([[0.41, 0.45, 0.52], [0.47, 0.43, 0.55], [0.44, 0.5, 0.49]])
    K = Complex(2, 3, tri, [[0, 1, 2]])
    res = deform(K, g, seed=1)
    u = g.to_lattice(res.projected.vertices)
    assert np.all(u >= -1e-9) and np.all(u <= 1 + 1e-9)
    # every vertex lies on a 2-face of the cell: at least one coordinate is 0 or 1
    assert np.all(np.any(np.isclose(u, np.rint(u), atol=1e-9), axis=1))
    assert np.isfinite(res.projection_k1) and res.projection_k1 > 0


def test_points_outside_the_frame_are_unmoved():
    g = cube_grid(2, cells=7)
    # a segment reaching from the core across C1 and beyond the cube
    K = Complex(1, 2, np.array([[0.013, 0.027], [0.61, 0.33]]), [[0, 1]])
    res = deform(K, g, seed=0)
    pts = np.array([[0.61, 0.33], [0.55, 0.302]])  # outside Q1 u C2
    np.testing.assert_array_equal(res.map_points(pts), pts)


def test_full_face_is_kept():
    g = cube_grid(3, cells=7)
    K = face_square(g, (1, 1, 0))
    out, occ = face_cleanup(K, g)
    assert occ.state((1, 1, 0)) == FULL
    assert mass(out) == pytest.approx(mass(K), rel=1e-12)


def test_half_covered_face_is_emptied():
    g = cube_grid(3, cells=7)
    K = half_face(g, (1, 1, 0))
    out, occ = face_cleanup(K, g)
    assert occ.before[(1, 1, 0)] == PARTIAL
    assert occ.state((1, 1, 0)) == EMPTY
    assert mass(out) == 0.0
    assert "1:1:0,empty" in occ.to_csv()


def test_face_on_core_boundary_is_untouched():
    g = cube_grid(3, cells=7)  # core spans lattice [-1, 2]
    code = (1, 1, -2)  # 2-face with u_3 = -1 fixed on the core boundary
    assert not face_interior(np.array([code]), g.core_lo, g.core_hi)[0]
    K = half_face(g, code)
    out, occ = face_cleanup(K, g)
    assert mass(out) == pytest.approx(mass(K), rel=1e-12)
    assert code not in occ.states


def test_point_map_agrees_with_complex_image():
    rng = np.random.default_rng(3)
    K = random_patch(3, 2, rng)
    g = build_grid(Cube(np.zeros(3), 1.0), 1 / 8)
    res = deform(K, g, seed=3)
    w = rng.dirichlet(np.ones(3), size=200)
    idx = rng.integers(0, len(K.simplices), size=200)
    pts = np.einsum("pk,pkn->pn", w, K.points()[idx])
    img = res.project_points(pts)
    dist = distance_to_simplices(img, res.projected.points())
    assert dist.max() < 1e-9 * g.eps


def test_rectangle_ratio_one_matches_cube():
    rng = np.random.default_rng(5)
    K = random_patch(3, 2, rng)
    a = rect_variant(K, Rectangle(np.zeros(3), 1.0, 1.0, 2), 1 / 8, seed=2)
    b = deform(K, build_grid(Cube(np.zeros(3), 1.0), 1 / 8), seed=2).image
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.simplices, b.simplices)


def test_rectangle_ratio_out_of_range():
    with pytest.raises(RatioOutOfRange):
        rect_variant(Complex.empty(2, 3), Rectangle(np.zeros(3), 1.0, 0.2, 2), 0.05)


def test_rectangle_skeleton_complex_is_fixed():
    R = Rectangle(np.zeros(3), 1.0, 0.5, 2)
    g = build_grid(R, 1 / 8)
    K = face_square(g, (1, 1, 0))
    out = rect_variant(K, R, 1 / 8)
    assert mass(out) == pytest.approx(mass(K), rel=1e-12)


def test_rectangle_k1_finite_across_eps():
    rng = np.random.default_rng(11)
    K = random_patch(3, 2, rng, size=0.3)
    R = Rectangle(np.zeros(3), 1.0, 0.5, 2)
    k1 = [rect_deform(K, R, f, seed=0).k1 for f in (1 / 8, 1 / 16, 1 / 32)]
    assert all(np.isfinite(k1)) and min(k1) >= 1.0 - 1e-9


def test_measure_k1_conventions():
    g = cube_grid(3, cells=7)
    sk = face_square(g, (1, 1, 0))
    st_sk = measure_k1(3, 2, 1, complexes=[sk], fractions=(0.7 / 7,), edge=0.7)
    assert st_sk.maxima[0.7 / 7] == pytest.approx(1.0, rel=1e-12)
    point = Complex(0, 3, np.array([[0.0123, 0.0456, 0.0789]]), [[0]])
    st_pt = measure_k1(3, 0, 1, complexes=[point], fractions=(0.1,))
    assert st_pt.maxima[0.1] == 1.0


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 10_000), nd=st.sampled_from([(2, 1), (3, 1), (3, 2), (4, 1)]))
def test_deformation_properties(seed, nd):
    n, d = nd
    rng = np.random.default_rng(seed)
    K = random_patch(n, d, rng, size=0.5, spread=0.2)
    g = build_grid(Cube(np.zeros(n), 1.0), 1 / 8)
    res = deform(K, g, seed=seed)
    report = check_properties(K, res, rng, n_samples=200)
    assert report.ok, report.failures
