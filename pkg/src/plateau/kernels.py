"""Backend selection for the mass kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``PLATEAU_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("PLATEAU_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None
    else:
        BACKEND = "compiled"
else:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py

simplex_volumes = _impl.simplex_volumes
mass_gradient = _impl.mass_gradient
project_pieces = _impl.project_pieces
distance_to_simplices = _impl.distance_to_simplices

__all__ = ["BACKEND", "simplex_volumes", "mass_gradient", "project_pieces", "distance_to_simplices"]
