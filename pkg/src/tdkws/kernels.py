"""Kernel backend selection.

The streaming engine calls ``dense_forward`` for every layer of every
frame, so it is provided both as a compiled extension and as a numpy
fallback.  The compiled backend is preferred when importable; set
TDKWS_BACKEND=numpy or TDKWS_BACKEND=cython to force a choice.
"""

import logging
import os

from .errors import ConfigError

logger = logging.getLogger(__name__)

_requested = os.environ.get("TDKWS_BACKEND", "auto").lower()

if _requested in ("auto", "cython"):
    try:
        from . import _kernels_cy as _impl
    except ImportError:
        if _requested == "cython":
            raise ConfigError(
                "TDKWS_BACKEND=cython but the compiled extension is not built; "
                "run 'pip install -e .' or 'python setup.py build_ext --inplace'"
            ) from None
        from . import _kernels_py as _impl

        logger.debug("compiled kernels unavailable, using numpy fallback")
elif _requested == "numpy":
    from . import _kernels_py as _impl
else:
    raise ConfigError(f"unknown TDKWS_BACKEND value: {_requested!r}")

BACKEND = _impl.BACKEND_NAME
dense_forward = _impl.dense_forward


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["numpy"]
    try:
        from . import _kernels_cy  # noqa: F401

        names.insert(0, "cython")
    except ImportError:
        pass
    return names
