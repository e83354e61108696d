"""Backend selection: compiled kernels when available, pure Python otherwise.

Set KCMLAB_FORCE_PYTHON=1 to force the fallback (used by the equivalence
tests and the benchmark).  Both backends are bit-identical by construction;
the compiled one is just fast.
"""

import os

from . import _pyloop

_forced = os.environ.get("KCMLAB_FORCE_PYTHON", "") not in ("", "0")

if not _forced:
    try:
        from . import _kernels as _impl

        HAVE_COMPILED = True
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _pyloop
        HAVE_COMPILED = False
else:
    _impl = _pyloop
    HAVE_COMPILED = False

BACKEND = _impl.BACKEND


def coupled_loop(*args):
    return _impl.coupled_loop(*args)


def label_components_compiled():
    """The compiled labeler, or None when running pure Python."""
    if HAVE_COMPILED and hasattr(_impl, "label_components"):
        return _impl.label_components
    return None


def get_backends():
    """(python_loop, compiled_loop_or_None) for benchmarking."""
    compiled = None
    if HAVE_COMPILED:
        compiled = _impl.coupled_loop
    else:
        try:
            from . import _kernels

            compiled = _kernels.coupled_loop
        except ImportError:
            compiled = None
    return _pyloop.coupled_loop, compiled
