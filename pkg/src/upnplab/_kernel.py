"""Select the wire kernel backend at import time.

The compiled ``_wirecore`` extension is used when it was built; otherwise the
pure-Python ``_wirecore_py`` module is used. Setting ``UPNPLAB_PURE_PYTHON=1``
forces the fallback.
"""

from __future__ import annotations

import os

from . import _wirecore_py

if os.environ.get("UPNPLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _wirecore_py
else:
    try:
        from . import _wirecore as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _wirecore_py

BACKEND = "python" if _impl is _wirecore_py else "cython"
MAX_PAYLOAD = _impl.MAX_PAYLOAD

split_head = _impl.split_head
join_head = _impl.join_head
escape_value = _impl.escape_value
unescape_value = _impl.unescape_value
is_token = _impl.is_token


def backends() -> dict:
    """Every importable backend keyed by name (used by tests and the benchmark)."""
    found = {"python": _wirecore_py}
    try:
        from . import _wirecore

        found["cython"] = _wirecore
    except ImportError:
        pass
    return found
