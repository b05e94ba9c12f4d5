"""Backend selection for the channel-exchange kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``PASSOPT_FORCE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

_compiled = None
if not os.environ.get("PASSOPT_FORCE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for the default)."""
    if name in (None, "auto"):
        name = DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {sorted(BACKENDS)}") from None


def has_compiled() -> bool:
    return _compiled is not None
