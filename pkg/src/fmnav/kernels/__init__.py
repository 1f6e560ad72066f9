"""Hot numeric kernels.

Each kernel has a numba-compiled path and a pure-numpy/python fallback. The
fallback is selected by setting ``FMNAV_DISABLE_NUMBA=1`` before import (or when
numba is not importable). Both paths produce identical results; the test suite
checks them against each other.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("FMNAV_DISABLE_NUMBA", "").lower() not in (
    "1", "true", "yes", "on")


def njit(fn):
    """Compile `fn` with numba when enabled; the plain function stays reachable as ``.py_func``."""
    if not USE_NUMBA:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True)(fn)


from .raycast import HIT_CEILING, HIT_FLOOR, HIT_NONE, cast_rays, cast_rays_numba, cast_rays_numpy  # noqa: E402
from .dda import mark_rays, mark_rays_numba, mark_rays_numpy, ray_cells  # noqa: E402
from .fmm import dijkstra8, fmm_solve, local_update, upwind_update  # noqa: E402

__all__ = [
    "USE_NUMBA", "njit",
    "HIT_NONE", "HIT_FLOOR", "HIT_CEILING",
    "cast_rays", "cast_rays_numba", "cast_rays_numpy",
    "mark_rays", "mark_rays_numba", "mark_rays_numpy", "ray_cells",
    "fmm_solve", "dijkstra8", "upwind_update", "local_update",
]
