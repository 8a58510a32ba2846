"""Kernel backend selection.

The compiled core is used when present; set VOXFLEET_PURE=1 to force the
pure-Python fallback (useful for benchmarking and debugging).
"""

from __future__ import annotations

import os

if os.environ.get("VOXFLEET_PURE"):
    from voxfleet._kernels import pure as _backend
else:
    try:
        from voxfleet._kernels import _core as _backend  # type: ignore[attr-defined]
    except ImportError:
        from voxfleet._kernels import pure as _backend

BACKEND = _backend.NAME

segment_blocked = _backend.segment_blocked
sense_update = _backend.sense_update
sweep_update = _backend.sweep_update
frontier_scan = _backend.frontier_scan
dijkstra_field = _backend.dijkstra_field
astar_path = _backend.astar_path

__all__ = [
    "BACKEND",
    "segment_blocked",
    "sense_update",
    "sweep_update",
    "frontier_scan",
    "dijkstra_field",
    "astar_path",
]
