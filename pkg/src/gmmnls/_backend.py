"""Selects the compiled kernels when importable, the numpy ones otherwise."""

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None

_BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    _BACKENDS["cython"] = _kernels_c

if os.environ.get("GMMNLS_PURE_PYTHON") or _kernels_c is None:
    kernels = _kernels_py
    name = "python"
else:
    kernels = _kernels_c
    name = "cython"


def available():
    return sorted(_BACKENDS)


def set_backend(backend: str) -> None:
    """Switch the kernels used by the mixture factors for this process."""
    global kernels, name
    try:
        kernels = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"backend {backend!r} not available; have {available()}") from None
    name = backend
