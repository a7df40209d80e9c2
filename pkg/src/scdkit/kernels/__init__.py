"""Backend selection for the hot DP kernels.

Default is the numba-jitted backend; set SCDKIT_NO_NUMBA=1 (or run without
numba installed) to fall back to the pure-numpy implementations.
"""

from __future__ import annotations

import os

from . import _numpy

if os.environ.get("SCDKIT_NO_NUMBA", "0") not in ("1", "true", "yes"):
    try:
        from . import _numba as _backend

        BACKEND = "numba"
    except ImportError:
        _backend = _numpy
        BACKEND = "numpy"
else:
    _backend = _numpy
    BACKEND = "numpy"

rnnt_forward_backward = _backend.rnnt_forward_backward
edit_dp = _backend.edit_dp

__all__ = ["BACKEND", "rnnt_forward_backward", "edit_dp"]
