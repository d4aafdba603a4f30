"""Hot-kernel backend selection.

The compiled Cython extension is preferred; the pure-numpy module is the
fallback. ``CELLFLOW_KERNELS`` forces a choice: ``auto`` (default),
``compiled``, or ``python``. Both backends implement the same contracts at
float64; results agree to rounding (not guaranteed bit-identical between
backends, only between runs of the same backend).
"""
from __future__ import annotations

import os

_requested = os.environ.get("CELLFLOW_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(
        f"CELLFLOW_KERNELS must be one of auto/compiled/python, got {_requested!r}"
    )

if _requested in ("auto", "compiled"):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import py_core as _impl

        BACKEND = "python"
else:
    from . import py_core as _impl

    BACKEND = "python"

dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
silu = _impl.silu
silu_backward = _impl.silu_backward
softmax_last = _impl.softmax_last
softmax_backward_last = _impl.softmax_backward_last
clip_sym = _impl.clip_sym
clip_sym_backward = _impl.clip_sym_backward
