"""Selection of the shooting kernel at import time.

The compiled extension is used when it imports cleanly; otherwise, or when
the environment variable ``RODCHAIN_PURE`` is set to ``1``, the pure-Python
implementation is used.  Both expose the same ``propagate`` function.
"""
import logging
import os

from . import _shoot_py

logger = logging.getLogger(__name__)

python_propagate = _shoot_py.propagate

try:
    from ._shoot import propagate as compiled_propagate
except ImportError:  # extension not built
    compiled_propagate = None

if compiled_propagate is not None and os.environ.get("RODCHAIN_PURE", "") != "1":
    propagate = compiled_propagate
    BACKEND = "compiled"
else:
    propagate = python_propagate
    BACKEND = "python"
logger.debug("shooting kernel backend: %s", BACKEND)

__all__ = ["propagate", "python_propagate", "compiled_propagate", "BACKEND"]
