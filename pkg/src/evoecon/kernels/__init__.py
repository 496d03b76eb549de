"""Hot-loop kernels with a compiled extension and a pure-Python fallback.

The compiled module is used when it imports; otherwise the reference
implementation in :mod:`._py` runs.  Both are bit-identical by contract.
"""

from . import _py

try:
    from . import _ext
except ImportError:  # extension not built
    _ext = None

BACKENDS = {"python": _py}
if _ext is not None:
    BACKENDS["compiled"] = _ext

_active = "compiled" if _ext is not None else "python"


def backend() -> str:
    return _active


def use_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}")
    _active = name


def shop(*args):
    return BACKENDS[_active].shop(*args)
