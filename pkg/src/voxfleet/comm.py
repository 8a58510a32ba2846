"""Pairwise communication: range + line-of-sight links and data-store merging.

Stores merge like grow-only replicated state: map cells move Unknown -> Known,
feature records keep the later lifecycle stage, results and plans union with
deterministic conflict rules. Exchange is commutative, associative and
idempotent on all set-valued fields, which is what makes data survive robot
failures — results are replicated, never moved.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from voxfleet.world import UNKNOWN, FeatureStatus, LocalMap, Priority, Vox, WorldGrid, euclid, raycast_los

# Byte accounting for the exchange counter (symmetric difference only).
BYTES_PER_CELL = 1
BYTES_PER_FEATURE = 32
BYTES_PER_WAYPOINT = 8
BYTES_PER_BBOX = 16


@dataclass
class LinkSpec:
    """Pairwise link constraint; LOS is always required."""

    range_m: float
    requires_los: bool = True

    def __post_init__(self) -> None:
        if self.range_m <= 0:
            raise ValueError("link range must be positive")


def link_available(truth: WorldGrid, pose_i: Vox, pose_j: Vox, link: LinkSpec) -> bool:
    """True iff the pair is within range and (if required) has line of sight."""
    if euclid(pose_i, pose_j) * truth.resolution > link.range_m:
        return False
    if link.requires_los and not raycast_los(truth, pose_i, pose_j):
        return False
    return True


@dataclass(frozen=True)
class FeatureRecord:
    """What a robot knows about one feature."""

    feature_id: int
    position: Vox
    status: FeatureStatus
    inspect_duration: int
    priority: Priority
    assigned_to: int = -1
    fitted_by: int = -1
    assign_seq: int = 0  # bumped on reassignment so a newer owner beats an older one

    def merged_with(self, other: "FeatureRecord") -> "FeatureRecord":
        if other.status > self.status:
            return other
        if self.status > other.status:
            return self
        if other.assign_seq != self.assign_seq:
            return other if other.assign_seq > self.assign_seq else self
        # Same stage and epoch: resolve field-wise, smallest non-default id wins.
        ids = [i for i in (self.assigned_to, other.assigned_to) if i >= 0]
        fit = [i for i in (self.fitted_by, other.fitted_by) if i >= 0]
        return replace(self,
                       assigned_to=min(ids) if ids else -1,
                       fitted_by=min(fit) if fit else -1)


@dataclass(frozen=True)
class PlanRecord:
    """A peer's plan as last heard, with its issue tick for freshness.

    purposes and dwells mirror the waypoints so a replanner can rebuild the
    executable route; byte accounting stays per waypoint either way.
    """

    robot_id: int
    issue_tick: int
    waypoints: tuple[Vox, ...]
    arrivals: tuple[float, ...]
    purposes: tuple[str, ...] = ()
    dwells: tuple[float, ...] = ()

    def end_pose(self) -> Vox:
        return self.waypoints[-1]

    def end_tick(self) -> float:
        return self.arrivals[-1]


@dataclass(frozen=True)
class BBoxStatusRecord:
    bbox_id: int
    seq: int
    status: str  # unassigned | assigned | complete
    explorer_id: int = -1


@dataclass
class DataStore:
    """One robot's replicated mission knowledge."""

    owner: int
    local_map: LocalMap
    features: dict[int, FeatureRecord] = field(default_factory=dict)
    results: dict[int, str] = field(default_factory=dict)
    plans: dict[int, PlanRecord] = field(default_factory=dict)
    bbox_status: dict[int, BBoxStatusRecord] = field(default_factory=dict)
    bytes_exchanged: int = 0

    def record_feature(self, rec: FeatureRecord) -> None:
        cur = self.features.get(rec.feature_id)
        self.features[rec.feature_id] = cur.merged_with(rec) if cur else rec

    def record_bbox(self, rec: BBoxStatusRecord) -> None:
        cur = self.bbox_status.get(rec.bbox_id)
        if cur is None or rec.seq > cur.seq:
            self.bbox_status[rec.bbox_id] = rec


def _merge_maps(a: LocalMap, b: LocalMap) -> int:
    """Move knowledge both ways; returns the number of cells transferred."""
    a_known = a.cells != UNKNOWN
    b_known = b.cells != UNKNOWN
    only_a = a_known & ~b_known
    only_b = b_known & ~a_known
    delta = int(np.count_nonzero(only_a)) + int(np.count_nonzero(only_b))
    if delta:
        b.cells[only_a] = a.cells[only_a]
        a.cells[only_b] = b.cells[only_b]
    for key in set(a.explored_volume) | set(b.explored_volume):
        hi = max(a.explored_volume.get(key, 0), b.explored_volume.get(key, 0))
        a.explored_volume[key] = hi
        b.explored_volume[key] = hi
    return delta


def exchange(a: DataStore, b: DataStore) -> int:
    """Merge both stores in place; returns bytes transferred (symmetric difference).

    Both stores end equal on all set-valued fields. Calling again immediately
    transfers zero bytes.
    """
    bytes_moved = _merge_maps(a.local_map, b.local_map) * BYTES_PER_CELL

    for fid in sorted(set(a.features) | set(b.features)):
        ra, rb = a.features.get(fid), b.features.get(fid)
        if ra == rb:
            continue
        merged = ra.merged_with(rb) if ra and rb else (ra or rb)
        a.features[fid] = merged
        b.features[fid] = merged
        bytes_moved += BYTES_PER_FEATURE

    for fid in sorted(set(a.results) | set(b.results)):
        if (fid in a.results) != (fid in b.results):
            payload = a.results.get(fid, b.results.get(fid))
            a.results[fid] = payload
            b.results[fid] = payload
            bytes_moved += len(payload)

    for rid in sorted(set(a.plans) | set(b.plans)):
        pa, pb = a.plans.get(rid), b.plans.get(rid)
        if pa == pb:
            continue
        if pa is None:
            winner = pb
        elif pb is None:
            winner = pa
        elif pb.issue_tick != pa.issue_tick:
            winner = pb if pb.issue_tick > pa.issue_tick else pa
        else:
            # Same issue tick, different content: pick a canonical one so the
            # merge does not depend on argument order.
            winner = min(pa, pb, key=lambda p: (p.waypoints, p.arrivals))
        if a.plans.get(rid) != winner:
            a.plans[rid] = winner
            bytes_moved += BYTES_PER_WAYPOINT * len(winner.waypoints)
        if b.plans.get(rid) != winner:
            b.plans[rid] = winner
            bytes_moved += BYTES_PER_WAYPOINT * len(winner.waypoints)

    for bid in sorted(set(a.bbox_status) | set(b.bbox_status)):
        sa, sb = a.bbox_status.get(bid), b.bbox_status.get(bid)
        if sa == sb:
            continue
        if sa is None:
            winner = sb
        elif sb is None:
            winner = sa
        elif sb.seq != sa.seq:
            winner = sb if sb.seq > sa.seq else sa
        else:
            winner = min(sa, sb, key=lambda s: (s.status, s.explorer_id))
        a.bbox_status[bid] = winner
        b.bbox_status[bid] = winner
        bytes_moved += BYTES_PER_BBOX

    a.bytes_exchanged += bytes_moved
    b.bytes_exchanged += bytes_moved
    return bytes_moved
