"""Text mesh format ``plateau-mesh v1`` and small JSON helpers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import MeshFormatError
from .geometry import Complex

HEADER = "plateau-mesh v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_mesh(K: Complex) -> str:
    lines = [HEADER, f"dim {K.dim} {K.ambient}"]
    for v in K.vertices:
        lines.append("v " + " ".join(_fmt(x) for x in v))
    for s in K.simplices:
        lines.append("s " + " ".join(str(int(i)) for i in s))
    return "\n".join(lines) + "\n"


def loads_mesh(text: str) -> Complex:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != HEADER:
        raise MeshFormatError(f"missing header {HEADER!r}")
    try:
        tag, d, n = lines[1].split()
        if tag != "dim":
            raise ValueError
        d, n = int(d), int(n)
    except (IndexError, ValueError) as exc:
        raise MeshFormatError("bad 'dim d n' line") from exc
    verts, simps = [], []
    for ln in lines[2:]:
        parts = ln.split()
        try:
            if parts[0] == "v":
                if len(parts) != n + 1:
                    raise MeshFormatError(f"vertex line needs {n} coordinates: {ln!r}")
                verts.append([float(x) for x in parts[1:]])
            elif parts[0] == "s":
                if len(parts) != d + 2:
                    raise MeshFormatError(f"simplex line needs {d + 1} indices: {ln!r}")
                simps.append([int(x) for x in parts[1:]])
            else:
                raise MeshFormatError(f"unknown record {parts[0]!r}")
        except ValueError as exc:
            raise MeshFormatError(f"cannot parse {ln!r}") from exc
    try:
        return Complex(d, n, np.array(verts, dtype=float).reshape(-1, n),
                       np.array(simps, dtype=np.intp).reshape(-1, d + 1))
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from exc


def write_mesh(path, K: Complex) -> None:
    Path(path).write_text(dumps_mesh(K))


def read_mesh(path) -> Complex:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    return loads_mesh(text)


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshFormatError(f"cannot read JSON {path}: {exc}") from exc


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
