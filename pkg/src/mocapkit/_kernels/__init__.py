"""Numerical kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
pure numpy fallback is used. Set ``MOCAPKIT_BACKEND=python`` (or ``cython``)
to force a backend; forcing ``cython`` raises if the extension is missing.
"""

from __future__ import annotations

import os

from . import _core_py

_FORCED = os.environ.get("MOCAPKIT_BACKEND", "").strip().lower()

if _FORCED == "python":
    _impl = _core_py
elif _FORCED == "cython":
    from . import _core as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _core_py

BACKEND = _impl.BACKEND_NAME

project_points = _impl.project_points
undistort_points = _impl.undistort_points
triangulate_batch = _impl.triangulate_batch


def available_backends() -> dict[str, object]:
    """Importable kernel modules keyed by backend name."""
    backends: dict[str, object] = {"python": _core_py}
    try:
        from . import _core

        backends["cython"] = _core
    except ImportError:
        pass
    return backends
