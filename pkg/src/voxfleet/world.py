"""Voxel world substrate: occupancy grids, per-robot maps, bounding boxes,
features, line of sight, sensing, frontiers, pathfinding, octree partition.

Coordinates are integer voxel triples (x, y, z); distances between voxels are
Euclidean between centers. Cell states: Unknown (only in robot maps), Free,
Occupied. The ground-truth grid has a closed Occupied boundary shell so the
workspace is bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from voxfleet import _kernels

Vox = tuple[int, int, int]

UNKNOWN = 0
FREE = 1
OCCUPIED = 2


class FeatureStatus(IntEnum):
    """Lifecycle stages; transitions only move forward."""

    UNDISCOVERED = 0
    FITTED = 1
    ASSIGNED = 2
    INSPECTED = 3
    COLLECTED = 4


class Priority(IntEnum):
    NORMAL = 0
    HIGH = 1


@dataclass
class WorldGrid:
    """Ground-truth occupancy (or a dense snapshot of one)."""

    dims: Vox
    resolution: float
    cells: np.ndarray
    ground_truth: bool = True

    @classmethod
    def empty(cls, dims: Vox, resolution: float, ground_truth: bool = True) -> "WorldGrid":
        """All-interior-Free grid with an Occupied boundary shell."""
        if min(dims) < 1 or resolution <= 0:
            raise ValueError("dims components must be >= 1 and resolution > 0")
        cells = np.full(dims, FREE, dtype=np.uint8)
        cells[0, :, :] = OCCUPIED
        cells[-1, :, :] = OCCUPIED
        cells[:, 0, :] = OCCUPIED
        cells[:, -1, :] = OCCUPIED
        cells[:, :, 0] = OCCUPIED
        cells[:, :, -1] = OCCUPIED
        return cls(dims=tuple(dims), resolution=resolution, cells=cells, ground_truth=ground_truth)

    def in_bounds(self, v: Vox) -> bool:
        return 0 <= v[0] < self.dims[0] and 0 <= v[1] < self.dims[1] and 0 <= v[2] < self.dims[2]

    def is_free(self, v: Vox) -> bool:
        return self.cells[v] == FREE


@dataclass
class LocalMap:
    """One robot's knowledge of the world; starts fully Unknown."""

    owner: int
    dims: Vox
    resolution: float
    cells: np.ndarray = field(default=None)  # type: ignore[assignment]
    explored_volume: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.cells is None:
            self.cells = np.full(self.dims, UNKNOWN, dtype=np.uint8)

    def in_bounds(self, v: Vox) -> bool:
        return 0 <= v[0] < self.dims[0] and 0 <= v[1] < self.dims[1] and 0 <= v[2] < self.dims[2]

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    def copy(self) -> "LocalMap":
        return LocalMap(owner=self.owner, dims=self.dims, resolution=self.resolution,
                        cells=self.cells.copy(), explored_volume=dict(self.explored_volume))


@dataclass
class BBox:
    """Axis-aligned search subvolume; corners are inclusive voxel coordinates."""

    id: int
    min_corner: Vox
    max_corner: Vox
    status: str = "unassigned"  # unassigned | assigned | complete

    def __post_init__(self) -> None:
        if any(a > b for a, b in zip(self.min_corner, self.max_corner)):
            raise ValueError("min_corner must be <= max_corner componentwise")

    @property
    def volume(self) -> int:
        return ((self.max_corner[0] - self.min_corner[0] + 1)
                * (self.max_corner[1] - self.min_corner[1] + 1)
                * (self.max_corner[2] - self.min_corner[2] + 1))

    def contains(self, v: Vox) -> bool:
        return all(lo <= c <= hi for lo, c, hi in zip(self.min_corner, v, self.max_corner))

    def centroid(self) -> Vox:
        return tuple((lo + hi) // 2 for lo, hi in zip(self.min_corner, self.max_corner))


@dataclass
class Feature:
    """An inspection target with a grounded result and a fixed inspection time."""

    id: int
    position: Vox
    aoi: tuple[Vox, ...]
    status: FeatureStatus = FeatureStatus.UNDISCOVERED
    inspect_duration: int = 3
    priority: Priority = Priority.NORMAL
    result_payload: str = ""

    def advance(self, new_status: FeatureStatus) -> None:
        """Lifecycle only moves forward; repeated stage writes are no-ops."""
        if new_status > self.status:
            self.status = new_status

    def aoi_centroid(self) -> Vox:
        n = len(self.aoi)
        return (round(sum(v[0] for v in self.aoi) / n),
                round(sum(v[1] for v in self.aoi) / n),
                round(sum(v[2] for v in self.aoi) / n))


def euclid(a: Vox, b: Vox) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def raycast_los(grid: WorldGrid | LocalMap, a: Vox, b: Vox, require_free: bool = False) -> bool:
    """True iff the voxel segment from a to b crosses no blocking voxel.

    Endpoints never block (a robot can see a wall's surface and out of its own
    voxel). With require_free, Unknown voxels also block — used for
    conservative feasibility checks on partial maps.
    """
    if not grid.in_bounds(a) or not grid.in_bounds(b):
        raise ValueError(f"raycast endpoints out of bounds: {a}, {b}")
    return not _kernels.segment_blocked(grid.cells, a[0], a[1], a[2], b[0], b[1], b[2], require_free)


def sense(truth: WorldGrid, local: LocalMap, pose: Vox, range_m: float,
          bboxes: tuple[BBox, ...] = ()) -> list[Vox]:
    """Reveal every in-range, line-of-sight voxel of the truth grid to the map.

    Returns the newly observed voxels in lexicographic order and updates the
    map's per-BBox explored-volume counters.
    """
    range_vox = range_m / truth.resolution
    new = _kernels.sense_update(truth.cells, local.cells, pose[0], pose[1], pose[2], range_vox)
    if new and bboxes:
        for bb in bboxes:
            inside = sum(1 for v in new if bb.contains(v))
            if inside:
                local.explored_volume[bb.id] = local.explored_volume.get(bb.id, 0) + inside
    return new


def frontiers(local: LocalMap, bbox: BBox) -> list[Vox]:
    """Free voxels inside the BBox 6-adjacent to an Unknown voxel inside it."""
    lo, hi = bbox.min_corner, bbox.max_corner
    if not local.in_bounds(lo) or not local.in_bounds(hi):
        raise ValueError(f"bbox {bbox.id} exceeds map bounds")
    return _kernels.frontier_scan(local.cells, lo[0], lo[1], lo[2], hi[0], hi[1], hi[2])


@dataclass
class TimedPath:
    """A 26-connected voxel path with cumulative arrival times in ticks."""

    waypoints: list[Vox]
    arrivals: list[float]
    length_m: float

    @property
    def duration(self) -> int:
        """Whole-path duration, rounded up to integer ticks."""
        return math.ceil(self.arrivals[-1] - 1e-9) if self.arrivals else 0


def astar_path(local: LocalMap | WorldGrid, start: Vox, goal: Vox, speed: float,
               z_lock: int = -1) -> TimedPath | None:
    """Shortest timed path through Free-or-Unknown voxels, or None if unreachable.

    speed is meters per tick. Unknown space is optimistically traversable;
    the caller replans when a path voxel is later sensed Occupied. z_lock
    restricts motion to one horizontal plane (ground vehicles).
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    path = _kernels.astar_path(local.cells, start[0], start[1], start[2],
                               goal[0], goal[1], goal[2], z_lock)
    if path is None:
        return None
    res = local.resolution
    arrivals = [0.0]
    total = 0.0
    for prev, cur in zip(path, path[1:]):
        total += euclid(prev, cur) * res
        arrivals.append(total / speed)
    return TimedPath(waypoints=[tuple(p) for p in path], arrivals=arrivals, length_m=total)


def path_duration(local: LocalMap | WorldGrid, start: Vox, goal: Vox, speed: float,
                  z_lock: int = -1) -> float:
    """Travel time in ticks, or inf when unreachable."""
    tp = astar_path(local, start, goal, speed, z_lock)
    return tp.arrivals[-1] if tp is not None else math.inf


def distance_field(local: LocalMap | WorldGrid, source: Vox, z_lock: int = -1) -> np.ndarray:
    """Voxel-unit shortest distances from source over Free-or-Unknown space."""
    return _kernels.dijkstra_field(local.cells, source[0], source[1], source[2], z_lock)


def fit_features(features: list[Feature], local: LocalMap, pose: Vox,
                 fov_range: float) -> list[Feature]:
    """Transition every visible Undiscovered feature to Fitted.

    Visibility: AoI centroid within fov_range of the pose with unblocked LOS
    on the caller's map. Stands in for the onboard detection pipeline.
    """
    fitted = []
    max_vox = fov_range / local.resolution
    for feat in sorted(features, key=lambda f: f.id):
        if feat.status != FeatureStatus.UNDISCOVERED:
            continue
        c = feat.aoi_centroid()
        if not local.in_bounds(c):
            continue
        if euclid(pose, c) > max_vox:
            continue
        if not raycast_los(local, pose, c):
            continue
        feat.advance(FeatureStatus.FITTED)
        fitted.append(feat)
    return fitted


def bbox_from_footprint(footprint: tuple[tuple[int, int], tuple[int, int]],
                        z_base: int, z_top: int, dz: int, dims: Vox,
                        bbox_id: int = 0) -> BBox:
    """Extrude a 2D footprint rectangle vertically with a safety margin."""
    (x0, y0), (x1, y1) = footprint
    if x1 < x0 or y1 < y0:
        raise ValueError("empty footprint")
    lo = (max(0, x0), max(0, y0), max(0, z_base - dz))
    hi = (min(dims[0] - 1, x1), min(dims[1] - 1, y1), min(dims[2] - 1, z_top + dz))
    return BBox(id=bbox_id, min_corner=lo, max_corner=hi)


def octree_partition(unexplored: set[Vox], min_dim_m: float, resolution: float) -> list[BBox]:
    """Recursive octant subdivision of the unexplored set's bounding box.

    An octant containing no unexplored voxels is dropped; an octant whose
    smallest extent is at or below min_dim_m becomes a leaf box. Returned
    boxes are disjoint and cover the set; ids follow recursion order.
    """
    if not unexplored:
        return []
    pts = np.array(sorted(unexplored), dtype=np.int64)
    lo = tuple(int(v) for v in pts.min(axis=0))
    hi = tuple(int(v) for v in pts.max(axis=0))
    out: list[tuple[Vox, Vox]] = []

    def recurse(lo: Vox, hi: Vox) -> None:
        sel = np.all((pts >= lo) & (pts <= hi), axis=1)
        if not sel.any():
            return
        extents_m = [(hi[i] - lo[i] + 1) * resolution for i in range(3)]
        if min(extents_m) <= min_dim_m:
            out.append((lo, hi))
            return
        cuts = []
        for i in range(3):
            if hi[i] > lo[i]:
                mid = (lo[i] + hi[i]) // 2
                cuts.append([(lo[i], mid), (mid + 1, hi[i])])
            else:
                cuts.append([(lo[i], hi[i])])
        for xr in cuts[0]:
            for yr in cuts[1]:
                for zr in cuts[2]:
                    recurse((xr[0], yr[0], zr[0]), (xr[1], yr[1], zr[1]))

    recurse(lo, hi)
    return [BBox(id=i, min_corner=b[0], max_corner=b[1]) for i, b in enumerate(out)]
