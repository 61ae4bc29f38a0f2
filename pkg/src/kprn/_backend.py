"""Kernel backend selection.

The compiled extension is used when importable; set ``KPRN_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

import os

from . import _kernels_py

if os.environ.get("KPRN_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = kernels.BACKEND


def get(name: str | None = None):
    """Return the kernel module called ``name`` ("cython" / "python"), or the active one."""
    if name is None or name == BACKEND:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
