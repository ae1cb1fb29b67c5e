"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
kernels are used. Set ``GSREFINE_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_ckernels = None
if os.environ.get("GSREFINE_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using pure-Python fallback")

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

active = _ckernels if _ckernels is not None else _pykernels
BACKEND = active.BACKEND


def get(name: str | None = None):
    """Return the kernel module named ``name`` (default: the active one)."""
    if name is None:
        return active
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None
