"""Backend selection for the integration hot loop.

The Cython extension is used when it imports; otherwise the NumPy
fallback. Set ``RESPONSE_FORECAST_PURE=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
em_integrate = _fallback.em_integrate

if not os.environ.get("RESPONSE_FORECAST_PURE"):
    try:
        from ._kernels import em_integrate  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def get_backend(name=None):
    """Return the ``em_integrate`` implementation called ``name``.

    ``None`` gives the import-time selection.
    """
    if name is None:
        return em_integrate
    if name == "python":
        return _fallback.em_integrate
    if name == "cython":
        from ._kernels import em_integrate as compiled
        return compiled
    raise ValueError(f"unknown backend {name!r}")
