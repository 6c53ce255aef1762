"""Kernel backend selection.

The compiled extension is used when importable; set ``GRIDTARIFF_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

python_backend = _kernels_py

if os.environ.get("GRIDTARIFF_PURE_PYTHON", "") not in ("", "0"):
    compiled_backend = None
else:
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend

power_injections = backend.power_injections
jacobian_polar = backend.jacobian_polar
BACKEND = backend.BACKEND
