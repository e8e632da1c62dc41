"""Integrator backend selection.

The compiled extension is used when it was built; otherwise the NumPy
implementation with the identical algorithm is used.  Set
``PMS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("PMS_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled


def get_backend(name=None):
    """Return the kernel module ``name`` (default: fastest available)."""
    return BACKENDS[name or BACKEND]
