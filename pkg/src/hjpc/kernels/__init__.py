"""Kernel backend selection.

The compiled extension is preferred; the pure-numpy module is the fallback.
Both expose the same functions and produce bit-identical results. Set
``HJPC_PURE=1`` to force the fallback (used by the parity tests and the
benchmark).
"""

import os

from . import _ref

if os.environ.get("HJPC_PURE"):
    _impl = _ref
    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _ref
        BACKEND = "pure"

cartpole_step = _impl.cartpole_step
render_frame = _impl.render_frame

__all__ = ["BACKEND", "cartpole_step", "render_frame", "_ref"]
