"""Kernel backend selection: compiled extension when available, numpy
fallback otherwise. Set DEMANDFORGE_PURE=1 to force the fallback."""
from __future__ import annotations

import os

from demandforge import _kernels_py

if os.environ.get("DEMANDFORGE_PURE"):
    _impl = _kernels_py
    HAVE_NATIVE = False
else:
    try:
        from demandforge import _kernels as _impl  # type: ignore[no-redef]
        HAVE_NATIVE = True
    except ImportError:
        _impl = _kernels_py
        HAVE_NATIVE = False

greedy_repair = _impl.greedy_repair
BACKEND = "native" if HAVE_NATIVE else "python"
