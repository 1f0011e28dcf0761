"""Backend selection for the contention kernel.

The compiled Cython kernel is used when the extension built; otherwise
the NumPy fallback takes over.  ``XLRA_BACKEND=python|cython`` forces a
choice (forcing ``cython`` without the extension raises).  Both kernels
share one contract and produce identical integer tallies for identical
inputs; ``benchmarks/bench_backends.py`` compares their speed.
"""

from __future__ import annotations

import os

from . import _contention_py

try:
    from . import _contention
    HAVE_EXTENSION = True
except ImportError:
    _contention = None
    HAVE_EXTENSION = False


def get_backend(name: str | None = None):
    """Kernel module for ``name`` (or the environment/default choice)."""
    if name is None:
        name = os.environ.get("XLRA_BACKEND")
    if name in (None, ""):
        name = "cython" if HAVE_EXTENSION else "python"
    if name == "python":
        return _contention_py
    if name == "cython":
        if not HAVE_EXTENSION:
            raise RuntimeError("XLRA_BACKEND=cython but the compiled "
                               "extension is not available")
        return _contention
    raise ValueError(f"unknown backend {name!r}")


def backend_name(name: str | None = None) -> str:
    mod = get_backend(name)
    return "cython" if mod is _contention and mod is not None else "python"
