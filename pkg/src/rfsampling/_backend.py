"""Pick the compiled kernels when importable, else the numpy fallback.

Set ``RF_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

NAME = "python"
kernels = _pykernels

if os.environ.get("RF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        NAME = "compiled"


def available():
    """Backends importable in this environment, by name."""
    out = {"python": _pykernels}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return out
    out["compiled"] = _compiled
    return out
