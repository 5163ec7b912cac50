"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or when ``KSLAB_FORCE_FALLBACK`` is set.  Both
backends expose the same functions with identical semantics.
"""

import os

if os.environ.get("KSLAB_FORCE_FALLBACK"):
    from . import fallback as _impl
else:
    try:
        from . import _stencil_core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import fallback as _impl

BACKEND = _impl.BACKEND

laplacian = _impl.laplacian
gradient = _impl.gradient
upwind_flux_div = _impl.upwind_flux_div
explicit_stage = _impl.explicit_stage
max_grad_mag = _impl.max_grad_mag

__all__ = [
    "BACKEND",
    "laplacian",
    "gradient",
    "upwind_flux_div",
    "explicit_stage",
    "max_grad_mag",
]
