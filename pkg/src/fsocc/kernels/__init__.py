"""Backend dispatch for the hot array kernels (convolution, max pooling).

The numba backend is used when importable; set ``FSOCC_BACKEND=numpy`` to
force the pure-numpy path, or ``FSOCC_BACKEND=numba`` to fail loudly when
numba is unavailable. ``benchmarks/bench_kernels.py`` compares the two.
"""

import os
import warnings

from ..errors import ConfigError

_requested = os.environ.get("FSOCC_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigError(
        f"FSOCC_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import _numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        warnings.warn("numba unavailable, falling back to the numpy kernels")
        from . import _numpy as _impl

        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
