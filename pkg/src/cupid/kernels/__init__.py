"""Backend selection for the scoring kernels.

The compiled extension is preferred; the numpy fallback is selected when the
extension is missing or when CUPID_PURE_PYTHON is set. Both expose the same
two functions with identical in-backend determinism guarantees.
"""
import contextlib
import os

from . import _fallback

if os.environ.get("CUPID_PURE_PYTHON"):
    _ACTIVE = _fallback
else:
    try:
        from . import _core as _compiled

        _ACTIVE = _compiled
    except ImportError:
        _ACTIVE = _fallback


def active():
    """Return the backend module currently in use."""
    return _ACTIVE


def backend_name() -> str:
    return _ACTIVE.NAME


def available_backends() -> dict:
    """Name -> module for every importable backend (used by the benchmark)."""
    backends = {_fallback.NAME: _fallback}
    try:
        from . import _core as _compiled

        backends[_compiled.NAME] = _compiled
    except ImportError:
        pass
    return backends


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch backends (testing and benchmarking only)."""
    global _ACTIVE
    backends = available_backends()
    if name not in backends:
        raise KeyError(f"unknown kernel backend {name!r}")
    previous = _ACTIVE
    _ACTIVE = backends[name]
    try:
        yield _ACTIVE
    finally:
        _ACTIVE = previous
