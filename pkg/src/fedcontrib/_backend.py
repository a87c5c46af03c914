"""Select the SGD kernel at import time.

The compiled extension is used when it was built; otherwise the NumPy
fallback is used. Set ``FEDCONTRIB_BACKEND=python`` to force the fallback.
"""

import logging
import os

from fedcontrib import _sgd_py

logger = logging.getLogger(__name__)

_REQUESTED = os.environ.get("FEDCONTRIB_BACKEND", "auto").strip().lower()


def _load_compiled():
    try:
        from fedcontrib import _sgd
    except ImportError:
        return None
    return _sgd


_compiled = _load_compiled()

if _REQUESTED == "python" or _compiled is None:
    if _REQUESTED == "cython" and _compiled is None:
        raise ImportError("FEDCONTRIB_BACKEND=cython but the extension is not built")
    sgd_epoch = _sgd_py.sgd_epoch
    BACKEND = "python"
else:
    sgd_epoch = _compiled.sgd_epoch
    BACKEND = "cython"

logger.debug("fedcontrib SGD backend: %s", BACKEND)


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.append("cython")
    return names


def get_sgd_epoch(name):
    """Return the ``sgd_epoch`` kernel of a named backend."""
    if name == "python":
        return _sgd_py.sgd_epoch
    if name == "cython":
        if _compiled is None:
            raise LookupError("compiled backend is not available")
        return _compiled.sgd_epoch
    raise LookupError(f"unknown backend {name!r}")
