"""Hot-loop kernels: the compiled extension when built, NumPy otherwise.

Set ``UKINV_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` reports which
implementation was selected at import.
"""
import os

from . import _kernels_py

if os.environ.get("UKINV_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

tridiag_solve_batch = _impl.tridiag_solve_batch
diffusion_system = _impl.diffusion_system

__all__ = ["BACKEND", "tridiag_solve_batch", "diffusion_system"]
