"""Hot loops behind the tensor engine, with backend selection at import.

The compiled Cython module is used when it is importable; otherwise the
numpy implementation is used. Set ``UDEHAZE_KERNELS=python`` to force the
fallback (the benchmark and the backend-equivalence tests rely on this).

Both backends expose ``im2col``, ``col2im``, ``min_filter2d`` and
``conv_output_size`` with identical signatures.
"""

import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("UDEHAZE_KERNELS", "").lower() != "python":
    _active = compiled_backend
    BACKEND = "cython"
else:
    _active = python_backend
    BACKEND = "python"

im2col = _active.im2col
col2im = _active.col2im
min_filter2d = _active.min_filter2d
conv_output_size = python_backend.conv_output_size

__all__ = ["BACKEND", "im2col", "col2im", "min_filter2d", "conv_output_size",
           "python_backend", "compiled_backend"]
