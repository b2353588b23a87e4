"""Hot pixel-loop kernels with two interchangeable implementations.

`numpy_impl` is pure vectorized numpy and always works. `numba_impl` holds
the same kernels as explicit loops under `@njit`; it is preferred when numba
imports cleanly and the environment does not opt out. Selection happens once
at import time:

    PSGLITE_NO_NUMBA=1  -> force the numpy fallback

Both implementations are kept importable side by side so the kernel benchmark
(`psglite bench-kernels`) can compare them on the same inputs. Results must
agree bitwise; the test suite asserts this.
"""

from __future__ import annotations

import importlib
import os

from . import numpy_impl

# import_module rather than `from . import`: the latter would short-circuit
# on the pre-assigned attribute below and never load the submodule
numba_impl = None
if os.environ.get("PSGLITE_NO_NUMBA", "0") != "1":
    try:
        numba_impl = importlib.import_module(".numba_impl", __name__)
    except ImportError:
        numba_impl = None

NUMBA_AVAILABLE = numba_impl is not None
_impl = numba_impl if NUMBA_AVAILABLE else numpy_impl

pool_windows = _impl.pool_windows
bilinear_resize = _impl.bilinear_resize
rle_encode = _impl.rle_encode
rle_decode = _impl.rle_decode

IMPL_NAME = "numba" if NUMBA_AVAILABLE else "numpy"

__all__ = [
    "pool_windows",
    "bilinear_resize",
    "rle_encode",
    "rle_decode",
    "NUMBA_AVAILABLE",
    "IMPL_NAME",
    "numpy_impl",
    "numba_impl",
]
