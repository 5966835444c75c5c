"""Element-kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Set ``ACCESSTOPO_KERNELS=numpy`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("ACCESSTOPO_KERNELS", "").lower() == "numpy":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
matvec = _impl.matvec
element_energy = _impl.element_energy
diagonal = _impl.diagonal
gather = _kernels_py.gather

__all__ = ["BACKEND", "matvec", "element_energy", "diagonal", "gather"]
