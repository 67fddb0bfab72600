"""Backend selection for the integration kernels.

The compiled extension is used when importable; otherwise the numpy
fallback takes over with identical semantics.  Set SPIKELOG_PURE=1 to
force the fallback, e.g. for benchmarking or debugging.
"""

import os

from . import fallback

if os.environ.get("SPIKELOG_PURE"):
    _impl = fallback
else:
    try:
        from . import _fixedpoint as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = fallback

BACKEND = _impl.BACKEND
integrate_dense = _impl.integrate_dense
integrate_sparse = _impl.integrate_sparse

ACC_MAX = fallback.ACC_MAX


def available_backends():
    """Names of importable backends, the active one first."""
    names = [BACKEND]
    if BACKEND != "python":
        names.append("python")
    else:
        try:
            from . import _fixedpoint  # noqa: F401

            names.append("cython")
        except ImportError:
            pass
    return names


def get_backend(name):
    """Fetch a backend module by name ('python' or 'cython')."""
    if name == "python":
        return fallback
    if name == "cython":
        from . import _fixedpoint

        return _fixedpoint
    raise ValueError(f"unknown backend {name!r}")
