"""Kernel dispatch: compiled extension when importable, NumPy/SciPy otherwise.

Set ``SPDIQKD_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
noclick_blocks = _kernels_py.noclick_blocks

if os.environ.get("SPDIQKD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        noclick_blocks = _compiled.noclick_blocks
        BACKEND = "cython"

__all__ = ["BACKEND", "noclick_blocks"]
