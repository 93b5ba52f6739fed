"""Backend selection for the O(N^2) kernels.

The numba path is used when numba imports and ``RIESZGAS_BACKEND`` is not
set to ``numpy``. The numpy path is always importable and is what the
benchmark compares against.
"""
import os

BACKEND_ENV = "RIESZGAS_BACKEND"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def default_backend():
    want = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if want not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {want!r}")
    if want == "numba" and HAVE_NUMBA:
        return "numba"
    return "numpy"


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: environment choice)."""
    name = default_backend() if name is None else name
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        from . import _numba_kernels as mod
    elif name == "numpy":
        from . import _numpy_kernels as mod
    else:
        raise ValueError(f"unknown backend {name!r}")
    return mod
