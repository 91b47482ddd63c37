"""Backend selection for the mask kernels.

The compiled extension is used when it imports; otherwise the numpy
versions are used. Set ``LASERLOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from laserloc import _kernels_py

BACKEND = "python"
brce = _kernels_py.brce
noise_filter = _kernels_py.noise_filter

if os.environ.get("LASERLOC_PURE_PYTHON", "") in ("", "0"):
    try:
        from laserloc import _kernels
    except ImportError:
        pass
    else:
        brce = _kernels.brce
        noise_filter = _kernels.noise_filter
        BACKEND = "cython"

window_starts = _kernels_py.window_starts
