"""Geometry kernel backends.

The hot per-epoch work is evaluating the stacked observation function and
its Jacobian for batches of sigma points. A compiled Cython kernel is used
when its extension module built; a vectorized NumPy implementation is the
fallback. Selection happens at import time and can be forced with
``MMWLOC_BACKEND=numpy|compiled`` or switched at runtime via
:func:`use_backend` (tests and benchmarks do this).
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
try:
    from . import _geom as _compiled  # type: ignore[attr-defined]

    _BACKENDS["compiled"] = _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("MMWLOC_BACKEND", "").strip().lower()
if _requested:
    if _requested not in _BACKENDS:
        raise ImportError(
            f"MMWLOC_BACKEND={_requested!r} is not available; "
            f"built backends: {sorted(_BACKENDS)}"
        )
    _active_name = _requested
else:
    _active_name = "compiled" if "compiled" in _BACKENDS else "numpy"
_active = _BACKENDS[_active_name]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def active_backend() -> str:
    return _active_name


def use_backend(name: str) -> str:
    """Switch the active backend ('numpy' or 'compiled'); returns the name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not built; have {sorted(_BACKENDS)}")
    _active_name = name
    _active = _BACKENDS[name]
    return name


def get_backend(name: str):
    """Return a backend module directly (used by benchmarks)."""
    return _BACKENDS[name]


def measure_batch(states, anchor_xyz, row_anchor, row_channel):
    return _active.measure_batch(states, anchor_xyz, row_anchor, row_channel)


def jacobian(state, anchor_xyz, row_anchor, row_channel):
    return _active.jacobian(state, anchor_xyz, row_anchor, row_channel)
