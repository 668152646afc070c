"""Backend selection for the hot round-timing kernel.

The compiled extension is used when it was built; otherwise the numpy
implementation is used.  Set ``TWINCHAIN_PURE_PYTHON=1`` to force the
fallback.  Both produce bit-identical results.
"""

import os

from . import _kernels_py

if os.environ.get("TWINCHAIN_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    round_times = _compiled.round_times
    BACKEND = "compiled"
else:
    round_times = _kernels_py.round_times
    BACKEND = "python"

__all__ = ["round_times", "BACKEND"]
