"""Range coder kernels, compiled when available.

``BACKEND`` is ``"cython"`` or ``"python"``. Set ``UVC_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from . import _coder_py

if os.environ.get("UVC_PURE_PYTHON") == "1":
    _impl = _coder_py
    BACKEND = "python"
else:
    try:
        from . import _coder as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _coder_py
        BACKEND = "python"

encode_blocks = _impl.encode_blocks
decode_blocks = _impl.decode_blocks
encode_symbols = _impl.encode_symbols
decode_symbols = _impl.decode_symbols

__all__ = [
    "BACKEND",
    "encode_blocks",
    "decode_blocks",
    "encode_symbols",
    "decode_symbols",
]
