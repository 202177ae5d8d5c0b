"""Kernel backend selection.

The compiled extension is used when it imports; set ``SRPMASK_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _pykernels

python_kernels = _pykernels
compiled_kernels = None

if not os.environ.get("SRPMASK_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_kernels
    except ImportError:  # extension not built
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = kernels.NAME


def available():
    """Names of the importable backends."""
    return [k.NAME for k in (compiled_kernels, python_kernels) if k is not None]


def get(name=None):
    if name is None:
        return kernels
    if name == "python":
        return python_kernels
    if name == "cython":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not available")
        return compiled_kernels
    raise ValueError(f"unknown backend {name!r}")
