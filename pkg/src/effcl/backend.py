"""Compute-backend selection for the hot kernels.

Two interchangeable kernel implementations ship with the package: a
numba-jitted one and a pure-numpy fallback.  The ``EFFCL_BACKEND``
environment variable picks between them:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - require numba, fail loudly if unavailable
* ``numpy``          - force the pure-numpy path

The choice is resolved once, at first use, so a single process never

mixes backends.  Matrix products go through BLAS on both paths; only the
fused elementwise/reduction kernels differ.
"""

from __future__ import annotations

import logging
import os

from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_VAR = "EFFCL_BACKEND"
_VALID = ("auto", "numba", "numpy")

_active: str | None = None


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def active_backend() -> str:
    """Return ``"numba"`` or ``"numpy"``, resolving the env flag on first call."""
    global _active
    if _active is None:
        choice = os.environ.get(ENV_VAR, "auto").strip().lower()
        if choice not in _VALID:
            raise ConfigError(
                f"{ENV_VAR}={choice!r} is not one of {_VALID}"
            )
        if choice == "auto":
            _active = "numba" if _numba_available() else "numpy"
            if _active == "numpy":
                logger.warning("numba not importable, falling back to numpy kernels")
        elif choice == "numba":
            if not _numba_available():
                raise ConfigError(f"{ENV_VAR}=numba but numba is not importable")
            _active = "numba"
        else:
            _active = "numpy"
        logger.debug("kernel backend: %s", _active)
    return _active
