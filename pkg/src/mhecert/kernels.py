"""Kernel dispatch: compiled core when importable, numpy fallback otherwise.

Set ``MHECERT_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and by the tests that compare both backends).
"""
import os

from . import _core_py

if os.environ.get("MHECERT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _core_py

BACKEND = _impl.BACKEND
uniform01 = _impl.uniform01
shooting_sensitivities = _impl.shooting_sensitivities

__all__ = ["BACKEND", "uniform01", "shooting_sensitivities"]
