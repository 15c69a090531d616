"""Backend selection for the evaluation kernel.

The compiled Cython kernel is used when it was built; otherwise, or when the
environment variable ``CHOICEOPT_PURE_PYTHON`` is set to a non-empty value,
the numpy implementation is used.
"""
import os

from . import _pycore

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS = {"python": _pycore}
if _core is not None:
    _BACKENDS["compiled"] = _core

if os.environ.get("CHOICEOPT_PURE_PYTHON") or _core is None:
    DEFAULT = "python"
else:
    DEFAULT = "compiled"


def available_backends():
    return tuple(_BACKENDS)


def get_backend(name=None):
    name = DEFAULT if name is None else name
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} is not available "
                         f"(have: {', '.join(_BACKENDS)})") from None
