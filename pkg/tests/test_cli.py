import json
import math

import numpy as np
import pytest

from plateau import cli, shapes
from plateau.geometry import Cube, mass
from plateau.grid import build_grid
from plateau.meshio import read_json, read_mesh, write_json, write_mesh


@pytest.fixture(scope="module")
def steiner_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("steiner")
    assert cli.main(["make-problem", "steiner", "--out", str(d), "--h", "0.1", "--seed", "3"]) == 0
    return d


def test_fmt_uses_seventeen_significant_digits():
    assert cli.fmt(math.pi) == "3.1415926535897931"
    assert float(cli.fmt(0.1)) == 0.1
    assert cli.fmt(3) == "3"


def test_solve_steiner_problem(steiner_dir, tmp_path, capsys):
    out, trace = tmp_path / "final.mesh", tmp_path / "trace.json"
    code = cli.main(["solve", "--problem", str(steiner_dir / "problem.json"),
                     "--out", str(out), "--trace", str(trace)])
    assert code == 0
    text = capsys.readouterr().out
    summary = dict(line.split(": ", 1) for line in text.strip().splitlines())
    assert float(summary["final_mass"]) == pytest.approx(math.sqrt(3), rel=1e-2)
    assert summary["seed"] == "3"
    assert mass(read_mesh(out)) == float(summary["final_mass"])
    doc = read_json(trace)
    assert doc["hash"] == summary["trace_hash"] and doc["converged"]


def test_solve_is_reproducible(steiner_dir, capsys):
    args = ["solve", "--problem", str(steiner_dir / "problem.json"), "--seed", "5"]
    cli.main(args)
    first = capsys.readouterr().out
    cli.main(args)
    assert capsys.readouterr().out == first


def test_solve_rejects_non_spanning_initial_complex(steiner_dir, tmp_path):
    doc = read_json(steiner_dir / "problem.json")
    K = read_mesh(steiner_dir / doc["initial"])
    write_mesh(tmp_path / "broken.mesh", K.subset(np.arange(len(K)) > 3).compact())
    for key in ("boundary", *doc["tests"]):
        name = doc[key] if key == "boundary" else key
        (tmp_path / name).write_text((steiner_dir / name).read_text())
    doc["initial"] = "broken.mesh"
    write_json(tmp_path / "problem.json", doc)
    assert cli.main(["solve", "--problem", str(tmp_path / "problem.json")]) == cli.EXIT_NOT_SPANNING


def test_solve_empty_schedule_is_parse_error(steiner_dir, tmp_path):
    doc = read_json(steiner_dir / "problem.json")
    doc["schedule"] = []
    for name in ("initial.mesh", "boundary.mesh", *doc["tests"]):
        (tmp_path / name).write_text((steiner_dir / name).read_text())
    write_json(tmp_path / "problem.json", doc)
    assert cli.main(["solve", "--problem", str(tmp_path / "problem.json")]) == cli.EXIT_PARSE


def test_missing_file_and_bad_arguments_are_parse_errors(tmp_path):
    assert cli.main(["audit", "--mesh", str(tmp_path / "nope.mesh")]) == cli.EXIT_PARSE
    assert cli.main(["solve"]) == cli.EXIT_PARSE
    assert cli.main(["frobnicate"]) == cli.EXIT_PARSE
    (tmp_path / "bad.mesh").write_text("not a mesh\n")
    assert cli.main(["audit", "--mesh", str(tmp_path / "bad.mesh")]) == cli.EXIT_PARSE


def test_check_span(steiner_dir, capsys):
    spec = str(steiner_dir / "problem.json")
    assert cli.main(["check-span", "--mesh", str(steiner_dir / "initial.mesh"), "--spec", spec]) == 0
    assert "spans: True" in capsys.readouterr().out
    K = read_mesh(steiner_dir / "initial.mesh")
    far = K.with_vertices(K.vertices + 10.0)
    write_mesh(steiner_dir / "far.mesh", far)
    assert cli.main(["check-span", "--mesh", str(steiner_dir / "far.mesh"), "--spec", spec]) == 1


def _flat_disk_files(tmp_path):
    H = shapes.circle([0, 0, 0], 1.0, 64)
    write_mesh(tmp_path / "H.mesh", H)
    write_json(tmp_path / "spec.json", {"H": "H.mesh", "tests": [], "mode": "spanning", "delta": 0.0})
    K = shapes.disk(0.1, boundary_segments=64)
    write_mesh(tmp_path / "disk.mesh", K)
    return K


def test_audit_flat_disk_passes(tmp_path):
    _flat_disk_files(tmp_path)
    out = tmp_path / "certs.json"
    code = cli.main(["audit", "--mesh", str(tmp_path / "disk.mesh"), "--spec", str(tmp_path / "spec.json"),
                     "--out", str(out)])
    assert code == 0
    assert [c["verdict"] for c in json.loads(out.read_text())] == ["pass"] * 5


def test_audit_wiggly_surface_fails(tmp_path, capsys):
    K = _flat_disk_files(tmp_path)
    V = K.vertices.copy()
    r2 = np.sum(V[:, :2] ** 2, axis=1)
    V[:, 2] = 0.05 * np.sin(20 * V[:, 0]) * np.exp(-r2 / 0.09)
    write_mesh(tmp_path / "wiggly.mesh", K.with_vertices(V))
    code = cli.main(["audit", "--mesh", str(tmp_path / "wiggly.mesh"), "--spec", str(tmp_path / "spec.json")])
    assert code == 1
    assert "monotonicity: fail" in capsys.readouterr().out


def _grid_file(tmp_path, eps):
    g = build_grid(Cube(np.zeros(3), 1.0), 1 / 8)
    write_json(tmp_path / "grid.json", {"domain": {"kind": "cube", "center": [0, 0, 0], "edge": 1.0}, "eps": eps})
    return g


def test_grid_check_aligned_mesh_has_unit_k1(tmp_path, capsys):
    g = _grid_file(tmp_path, 1 / 8)
    K = shapes.square(4, 3, size=0.5, origin=g.from_lattice(np.array([-2.0, -2.0, 0.0])))
    write_mesh(tmp_path / "sq.mesh", K)
    assert cli.main(["grid-check", "--mesh", str(tmp_path / "sq.mesh"), "--grid", str(tmp_path / "grid.json")]) == 0
    assert "k1: 1\n" in capsys.readouterr().out


def test_grid_check_random_complex_reports_finite_k1(tmp_path, capsys):
    from plateau.grid import random_patch

    _grid_file(tmp_path, 1 / 8)
    write_mesh(tmp_path / "rand.mesh", random_patch(3, 2, np.random.default_rng(1)))
    assert cli.main(["grid-check", "--mesh", str(tmp_path / "rand.mesh"), "--grid", str(tmp_path / "grid.json")]) == 0
    k1 = float([ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("k1: ")][0][4:])
    assert 1.0 <= k1 < math.inf


def test_grid_check_too_coarse(tmp_path):
    _grid_file(tmp_path, 0.5)
    write_mesh(tmp_path / "sq.mesh", shapes.square(2, 3, size=0.2))
    assert cli.main(["grid-check", "--mesh", str(tmp_path / "sq.mesh"),
                     "--grid", str(tmp_path / "grid.json")]) == cli.EXIT_GRID_TOO_COARSE


def test_threads_flag_and_environment(monkeypatch):
    assert cli.resolve_threads(2) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.resolve_threads(None) == 3
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(Exception):
        cli.resolve_threads(None)
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli.resolve_threads(None) is None
    assert cli.main(["--threads", "0", "make-problem", "steiner", "--out", "/tmp/x"]) == cli.EXIT_PARSE
