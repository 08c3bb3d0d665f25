"""Python bindings for the segment-recurrence transformer workbench."""

try:
    from ._longdoc import *  # noqa: F401,F403  (installed layout)
    from . import _longdoc as _core  # noqa: F401
except ImportError:  # build-tree layout: extension next to the package
    from _longdoc import *  # noqa: F401,F403
    import _longdoc as _core  # noqa: F401

__all__ = [name for name in dir(_core) if not name.startswith("_")]
