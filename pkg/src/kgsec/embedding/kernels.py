"""Kernel backend selection.

The compiled extension is preferred; set ``KGSEC_PURE_PYTHON=1`` to force the
numpy fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _kernels_py

if os.environ.get("KGSEC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels_c as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

theta_batch = _impl.theta_batch
accumulate_theta_grad = _impl.accumulate_theta_grad
sample_rows = _impl.sample_rows


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels_c

        out["compiled"] = _kernels_c
    except ImportError:
        pass
    return out
