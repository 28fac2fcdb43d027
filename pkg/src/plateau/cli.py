"""Command-line interface: ``plateau <command> ...``.

Exit codes: 0 success, 1 a check failed or the solve did not converge,
2 unreadable or invalid input, 3 the initial complex does not span,
4 the grid is too coarse to have a core.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .errors import GridTooCoarse, MeshFormatError, NotSpanning, PlateauError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_NOT_SPANNING = 3
EXIT_GRID_TOO_COARSE = 4

THREADS_ENV = "PLATEAU_THREADS"


def fmt(x) -> str:
    """Numbers at 17 significant digits so that they read back bit-identically."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _emit(key: str, value) -> None:
    print(f"{key}: {fmt(value) if isinstance(value, (int, float, np.number)) else value}")


def _write_json(path, doc) -> None:
    from .meshio import write_json

    write_json(path, doc)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    from .geometry import mass
    from .meshio import write_mesh
    from .minimize import descend, load_problem

    problem, file_seed = load_problem(args.problem)
    seed = file_seed if args.seed is None else args.seed
    trace = descend(problem, seed=seed)
    if args.out:
        write_mesh(args.out, trace.final)
    if args.trace:
        _write_json(args.trace, trace.to_json())
    _emit("problem", problem.name)
    _emit("seed", seed)
    _emit("final_mass", mass(trace.final))
    _emit("iterations", sum(1 for e in trace.iterates if e["kind"] != "remesh"))
    _emit("stationarity", trace.stationarity)
    _emit("stat_tol", trace.stat_tol)
    _emit("converged", trace.converged)
    _emit("trace_hash", trace.hash())
    return EXIT_OK if trace.converged else EXIT_FAIL


def cmd_audit(args) -> int:
    from .diagnostics import audit
    from .meshio import read_mesh
    from .spanning import read_spec

    K = read_mesh(args.mesh)
    spec = read_spec(args.spec) if args.spec else None
    certs = audit(K, spec, seed=args.seed or 0, r_min=args.r_min)
    for c in certs:
        detail = ", ".join(f"{k}={fmt(v) if isinstance(v, (int, float)) else v}" for k, v in c.details.items())
        print(f"{c.kind}: {c.verdict} ({detail})")
    if args.out:
        _write_json(args.out, [c.to_json() for c in certs])
    return EXIT_OK if all(c.passed for c in certs) else EXIT_FAIL


def cmd_grid_check(args) -> int:
    from .grid import check_properties, deform, grid_from_json
    from .meshio import read_json, read_mesh

    K = read_mesh(args.mesh)
    try:
        g = grid_from_json(read_json(args.grid))
    except (KeyError, TypeError) as exc:
        raise MeshFormatError(f"bad grid descriptor: {exc}") from exc
    if K.ambient != g.n:
        raise MeshFormatError(f"mesh lives in R^{K.ambient}, grid in R^{g.n}")
    seed = args.seed or 0
    res = deform(K, g, seed)
    rep = check_properties(K, res, np.random.default_rng(seed))
    k1_ok = math.isfinite(res.projection_k1) and math.isfinite(res.k1)
    for name, passed in sorted(rep.checks.items()):
        print(f"{name}: {'pass' if passed else 'fail'}")
    print(f"6_ratio_bounded: {'pass' if k1_ok else 'fail'}")
    for line in rep.failures:
        print(f"  {line}")
    _emit("k1", res.projection_k1)
    _emit("k1_after_cleanup", res.k1)
    _emit("holes", len(res.holes))
    if args.out:
        _write_json(args.out, {"checks": rep.checks, "failures": rep.failures, "k1": res.projection_k1,
                               "k1_after_cleanup": res.k1, "holes": len(res.holes), "grid": g.to_json()})
    return EXIT_OK if rep.ok and k1_ok else EXIT_FAIL


def cmd_check_span(args) -> int:
    from .meshio import read_mesh
    from .spanning import read_spec, spans

    K = read_mesh(args.mesh)
    spec = read_spec(args.spec)
    rep = spans(K, spec)
    for t in spec.tests:
        w = rep.witnesses.get(t.label)
        where = "none" if w is None else " ".join(fmt(x) for x in w)
        print(f"{t.label}: {'meets' if w is not None else 'misses'} at {where}")
    _emit("spans", rep.ok)
    if args.out:
        _write_json(args.out, rep.to_json())
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_make_problem(args) -> int:
    from .minimize import make_problem, save_problem

    try:
        p = make_problem(args.name, args.h, args.seed or 0)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from exc
    path = save_problem(p, args.out, seed=args.seed or 0)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plateau", description="Discrete Plateau problems: solve and audit.")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"cap on BLAS/OpenMP threads (default: ${THREADS_ENV} or library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the minimizing sequence on a problem file")
    p.add_argument("--problem", required=True, type=Path)
    p.add_argument("--out", type=Path, help="final mesh")
    p.add_argument("--trace", type=Path, help="trace JSON")
    p.add_argument("--seed", type=int, default=None, help="overrides the seed stored in the problem file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("audit", help="density, monotonicity, stationarity and singular-set certificates")
    p.add_argument("--mesh", required=True, type=Path)
    p.add_argument("--spec", type=Path, help="spanning spec JSON providing the boundary H")
    p.add_argument("--out", type=Path, help="certificates JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r-min", type=float, default=0.05, help="radius for unit density and singular flagging")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("grid-check", help="grid deformation property suite and measured k1")
    p.add_argument("--mesh", required=True, type=Path)
    p.add_argument("--grid", required=True, type=Path, help="grid descriptor JSON")
    p.add_argument("--out", type=Path, help="report JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grid_check)

    p = sub.add_parser("check-span", help="test a mesh against a spanning spec")
    p.add_argument("--mesh", required=True, type=Path)
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--out", type=Path, help="witness report JSON")
    p.set_defaults(func=cmd_check_span)

    p = sub.add_parser("make-problem", help="write a built-in problem (steiner, disk, disk4) to a directory")
    p.add_argument("name")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--h", type=float, default=0.05, help="mesh size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_problem)
    return parser


def resolve_threads(flag: int | None) -> int | None:
    if flag is not None:
        value = flag
    elif os.environ.get(THREADS_ENV):
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError as exc:
            raise MeshFormatError(f"{THREADS_ENV} must be an integer") from exc
    else:
        return None
    if value < 1:
        raise MeshFormatError("thread count must be at least 1")
    return value


def _thread_limit(threads: int | None):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        threads = resolve_threads(args.threads)
        with _thread_limit(threads):
            return args.func(args)
    except NotSpanning as exc:
        print(f"error: initial complex does not span: {exc}", file=sys.stderr)
        return EXIT_NOT_SPANNING
    except GridTooCoarse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRID_TOO_COARSE
    except (MeshFormatError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (PlateauError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
