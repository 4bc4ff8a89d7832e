"""Kernel backend selection.

The compiled extension (`._fast`, built from Cython) is preferred when
importable; otherwise the pure-numpy implementation is used.  Override with
the environment variable ``ICAREC_BACKEND``:

* ``ICAREC_BACKEND=python``   force the numpy backend
* ``ICAREC_BACKEND=compiled`` require the extension (ImportError if missing)

Forward kernels are bit-identical across backends; see `_numpy_impl` for the
summation-order contract.  `benchmarks/bench_kernels.py` compares the two.
"""

import os

from . import _numpy_impl

_requested = os.environ.get("ICAREC_BACKEND", "auto").strip().lower()

if _requested not in ("auto", "python", "compiled"):
    raise ValueError(
        f"ICAREC_BACKEND must be 'auto', 'python' or 'compiled', got {_requested!r}"
    )

if _requested == "python":
    _impl = _numpy_impl
    BACKEND = "python"
else:
    try:
        from . import _fast as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "ICAREC_BACKEND=compiled but the icarec._kernels._fast "
                "extension is not built; reinstall with a C compiler available"
            )
        _impl = _numpy_impl
        BACKEND = "python"

matmul = _impl.matmul
conv1d_fwd = _impl.conv1d_fwd
conv1d_grad_w = _impl.conv1d_grad_w


def backend_name():
    """Name of the active kernel backend ('compiled' or 'python')."""
    return BACKEND
