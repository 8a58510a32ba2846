"""voxfleet: deterministic tick-based simulator for heterogeneous explore/inspect
robot fleets coordinating through line-of-sight, range-limited rendezvous.

The package is organized around seven modules:

- world:    voxel occupancy grids, line of sight, pathfinding, frontiers, features
- comm:     link model and mergeable data stores
- explore:  deadline-constrained frontier tour planning for explorers
- subgroup: explorer/inspector meeting optimization and feature allocation
- gcs:      ground-station scheduling (prediction, corner points, TSP-TW, assignment)
- sim:      the tick engine (robots, protocols, mismatch, failures, energy, metrics)
- cli:      scenario generation and batch running

Hot geometric kernels live in voxfleet._kernels with a compiled core and a
pure-Python fallback chosen at import time.
"""

from voxfleet._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
