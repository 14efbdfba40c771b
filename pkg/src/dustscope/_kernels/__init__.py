"""Hot-loop kernels with a compiled implementation and a numpy fallback.

The compiled module is used when it imports cleanly; setting
``DUSTSCOPE_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
evolve = _fallback.evolve

if os.environ.get("DUSTSCOPE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _propagate
    except ImportError:  # extension not built
        pass
    else:
        evolve = _propagate.evolve
        BACKEND = "cython"

__all__ = ["BACKEND", "evolve"]
