"""Hot-loop kernels with selectable backend.

The numba backend is used when importable; set LANEGRID_BACKEND=numpy to
force the pure-numpy fallback (or =numba to fail loudly if numba is
missing). Both backends return bitwise-identical results; see
benchmarks/kernel_bench.py for the speed comparison.
"""

from __future__ import annotations

import os

_requested = os.environ.get("LANEGRID_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"LANEGRID_BACKEND={_requested!r} not recognised (use 'numba' or 'numpy')"
    )

if _requested == "numpy":
    from . import _numpy_impl as _impl

    _BACKEND = "numpy"
else:
    try:
        from . import _numba_impl as _impl

        _BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy_impl as _impl

        _BACKEND = "numpy"


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _BACKEND


points_in_polygon = _impl.points_in_polygon
segments_blocked = _impl.segments_blocked
occupancy_table = _impl.occupancy_table
within_radius_mask = _impl.within_radius_mask
nearest_index = _impl.nearest_index
masked_gather_max = _impl.masked_gather_max
scatter_rows_sum = _impl.scatter_rows_sum
segment_sum_csr = _impl.segment_sum_csr

__all__ = [
    "backend_name",
    "points_in_polygon",
    "segments_blocked",
    "occupancy_table",
    "within_radius_mask",
    "nearest_index",
    "masked_gather_max",
    "scatter_rows_sum",
    "segment_sum_csr",
]
