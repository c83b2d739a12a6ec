"""Kernel backend selection.

The compiled extension is used when it imports; set ``SRKD_BACKEND=python``
to force the numpy fallback (or ``cython`` to fail loudly if it is missing).
"""
import os

_requested = os.environ.get("SRKD_BACKEND", "auto").lower()

if _requested == "python":
    from srkd import _pykernels as kernels
elif _requested == "cython":
    from srkd import _ckernels as kernels
else:
    try:
        from srkd import _ckernels as kernels
    except ImportError:  # extension not built
        from srkd import _pykernels as kernels

BACKEND = kernels.NAME

__all__ = ["kernels", "BACKEND"]
