"""Selects the compiled kernels when available, the numpy fallback otherwise.

Set ``ADALOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from adaloc import _fallback

KERNEL_NAMES = ("combine_array", "rho_block", "l96_advance", "arakawa_jacobian", "analysis_rmse_batch")

_compiled = None
if not os.environ.get("ADALOC_PURE_PYTHON"):
    try:
        from adaloc import _kernels as _compiled
    except ImportError:
        _compiled = None

kernels = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"


def get(name: str, backend: str | None = None):
    """Look up a kernel by name, optionally from a specific backend ("compiled" or "python")."""
    if name not in KERNEL_NAMES:
        raise KeyError(name)
    if backend is None:
        return getattr(kernels, name)
    if backend == "python":
        return getattr(_fallback, name)
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return getattr(_compiled, name)
    raise ValueError(f"unknown backend {backend!r}")


def compiled_available() -> bool:
    return _compiled is not None
