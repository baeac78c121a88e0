"""Kernel backend selection.

The compiled ``_ckernels`` extension is preferred; the pure-Python module is
used when it was not built or when ``CITS_SIM_PURE_PYTHON`` is set to a
non-empty value other than ``0``.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

if _ckernels is not None and os.environ.get("CITS_SIM_PURE_PYTHON", "0") in ("", "0"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
crc32 = _impl.crc32
shortest_path = _impl.shortest_path
