"""Hot numerical kernels: compiled core with a pure-numpy fallback.

The compiled extension is preferred when it imported successfully; set the
``KVC_BACKEND`` environment variable to ``python`` or ``compiled`` to force a
choice before import. :func:`set_backend` rebinds the exported functions and
exists for benchmarks and tests; switching backends mid-computation is not
supported.
"""

import os

from ..errors import ParameterError
from . import _pykern

_BACKENDS = {"python": _pykern}
try:
    from . import _ckern

    _BACKENDS["compiled"] = _ckern
except ImportError:
    _ckern = None

_current = "python"


def available_backends():
    """Names of the backends importable in this install."""
    return sorted(_BACKENDS)


def backend():
    """Name of the backend currently bound to the exported functions."""
    return _current


def set_backend(name):
    """Bind the exported kernel functions to the named backend."""
    global _current, fwht_rows, softmax_colsum, causal_softmax_colsum
    if name not in _BACKENDS:
        raise ParameterError(f"unknown kernel backend {name!r}; have {available_backends()}")
    impl = _BACKENDS[name]
    fwht_rows = impl.fwht_rows
    softmax_colsum = impl.softmax_colsum
    causal_softmax_colsum = impl.causal_softmax_colsum
    _current = name


_requested = os.environ.get("KVC_BACKEND", "auto")
if _requested == "auto":
    _requested = "compiled" if "compiled" in _BACKENDS else "python"
set_backend(_requested)
