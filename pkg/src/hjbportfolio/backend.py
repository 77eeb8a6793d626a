"""Numba/numpy backend selection for the hot kernels.

The PDE time-stepping loop and the Monte Carlo path loop dominate runtime.
Both have a numba @njit implementation and a pure numpy/scipy fallback.
Selection order:

  1. If numba is not importable, the numpy path is used.
  2. If the environment variable HJBPORTFOLIO_NO_NUMBA is set to a truthy
     value ("1", "true", "yes"), the numpy path is used.
  3. Otherwise the numba path is used.

The flag is read at call time, so tests and benchmarks can flip it at
runtime. ``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

ENV_FLAG = "HJBPORTFOLIO_NO_NUMBA"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False


def numba_disabled_by_env() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes")


def numba_enabled() -> bool:
    """True if the jitted kernels should be used."""
    return HAVE_NUMBA and not numba_disabled_by_env()
