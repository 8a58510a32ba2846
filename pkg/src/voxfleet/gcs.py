"""Ground-station coordination: predictions, meeting routes, box assignment.

The GCS never sees the world directly. It schedules rendezvous with its
explorers from what they reported last time, predicts when each box will
be done, and strings the resulting meetings into a tour on the ground
plane. Assignment of work to subgroups rolls forward one box at a time.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from voxfleet.subgroup import MeetingEvent, TravelCache
from voxfleet.world import OCCUPIED, BBox, LocalMap, Vox

_EPS = 1e-9

# Meeting tours with at most this many visits are ordered exactly.
EXACT_TOUR_LIMIT = 8

BASIS_FEATURE_RATE = "FeatureRate"
BASIS_VOLUME_RATE = "VolumeRate"


@dataclass(frozen=True)
class Prediction:
    """When the GCS expects a box to be finished; doubles as next meeting time."""

    bbox_id: int
    tick: int
    basis: str
    issued_tick: int = -1

    def __post_init__(self) -> None:
        if self.issued_tick >= 0 and self.tick <= self.issued_tick:
            raise ValueError("prediction must point past the tick it was issued at")


@dataclass
class GcsRoute:
    """Ordered meeting visits with their tolerance windows.

    Scheduled fire ticks are non-decreasing along the route by construction
    (each leg departs no earlier than the previous meeting fired). Visits
    that no ordering could serve are listed in dropped for rescheduling.
    """

    visits: list[tuple[MeetingEvent, tuple[float, float]]] = field(default_factory=list)
    arrivals: list[float] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    idle: float = 0.0


def predict_completion(
    v_bbox: float,
    v_explored: float,
    n_fitted: int,
    n_results: int,
    t_elapsed: float,
) -> float:
    """Extrapolate how long a box needs, from rates observed so far.

    With results in hand the estimate scales elapsed time by both the
    volume-per-result and feature-per-volume rates; before any result it
    falls back to the plain explored-volume ratio. The value is an offset
    from the start of the box's exploration window; the caller anchors it.
    """
    if v_explored <= 0:
        raise ValueError("no explored volume yet; defer the prediction")
    if t_elapsed <= 0:
        raise ValueError("elapsed time must be positive")
    if n_results > 0:
        return (v_bbox / n_results) * (n_fitted / v_explored) * t_elapsed
    return v_bbox * t_elapsed / v_explored


def prediction_basis(n_results: int) -> str:
    return BASIS_FEATURE_RATE if n_results > 0 else BASIS_VOLUME_RATE


def _nudge_to_passable(local: LocalMap, p: Vox, max_r: int = 6) -> Vox | None:
    """Nearest non-Occupied voxel to p, expanding ring search, ties lexicographic."""
    if local.in_bounds(p) and local.cells[p] != OCCUPIED:
        return p
    for r in range(1, max_r + 1):
        best: Vox | None = None
        best_d = math.inf
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    q = (p[0] + dx, p[1] + dy, p[2] + dz)
                    if not local.in_bounds(q) or local.cells[q] == OCCUPIED:
                        continue
                    d = dx * dx + dy * dy + dz * dz
                    if d < best_d or (d == best_d and q < best):
                        best, best_d = q, d
        if best is not None:
            return best
    return None


def bbox_entry_point(bbox: BBox, pose: Vox, local: LocalMap, travel: TravelCache) -> Vox | None:
    """The in-box voxel the explorer can reach cheapest; its default way in."""
    f = travel._field(pose)
    best: Vox | None = None
    best_d = math.inf
    for x in range(bbox.min_corner[0], bbox.max_corner[0] + 1):
        for y in range(bbox.min_corner[1], bbox.max_corner[1] + 1):
            for z in range(bbox.min_corner[2], bbox.max_corner[2] + 1):
                if local.cells[x, y, z] == OCCUPIED:
                    continue
                d = float(f[x, y, z])
                if d < best_d - _EPS or (d < best_d + _EPS and (best is None or (x, y, z) < best)):
                    best, best_d = (x, y, z), d
    return best if best is not None and math.isfinite(best_d) else None


def select_meeting_corner(
    bbox: BBox,
    pose: Vox,
    target_tick: float,
    local: LocalMap,
    speed: float,
    *,
    now: float = 0.0,
    ground_z: int = 1,
) -> Vox:
    """Pick the box footprint corner whose reachable arrival best fits the target.

    Corners sit one voxel above ground so the ground vehicle can make them,
    nudged off occupied cells. When no corner is reachable the explorer's
    cheapest entry voxel into the box stands in.
    """
    travel = TravelCache(local)
    raw = sorted({
        (bbox.min_corner[0], bbox.min_corner[1], ground_z),
        (bbox.min_corner[0], bbox.max_corner[1], ground_z),
        (bbox.max_corner[0], bbox.min_corner[1], ground_z),
        (bbox.max_corner[0], bbox.max_corner[1], ground_z),
    })
    best: Vox | None = None
    best_key: tuple[float, Vox] | None = None
    for c in raw:
        p = _nudge_to_passable(local, c)
        if p is None:
            continue
        dt = travel.ticks(pose, p, speed)
        if not math.isfinite(dt):
            continue
        key = (abs((now + dt) - target_tick), p)
        if best_key is None or key < best_key:
            best, best_key = p, key
    if best is not None:
        return best
    entry = bbox_entry_point(bbox, pose, local, travel)
    if entry is None:
        raise ValueError(f"box {bbox.id} has no reachable meeting point")
    return entry


def _tour_cost(
    order: tuple[int, ...],
    visits: list[tuple[int, Vox, float]],
    pose: Vox,
    speed: float,
    delta_bar: float,
    now: float,
    travel: TravelCache,
) -> tuple[float, list[float]] | None:
    """Idle and arrival times of one visiting order, or None if a window breaks."""
    at, t = pose, now
    idle = 0.0
    arrivals = []
    for k in order:
        _, p_c, t_c = visits[k]
        dt = travel.ticks(at, p_c, speed)
        if not math.isfinite(dt):
            return None
        arr = t + dt
        if arr > t_c + delta_bar + _EPS:
            return None
        arrivals.append(arr)
        idle += max(0.0, t_c - arr)
        at, t = p_c, max(arr, t_c)
    return idle, arrivals


def schedule_tsp_tw(
    pending: list[tuple[int, Vox, float]],
    pose: Vox,
    speed: float,
    delta_bar: float,
    *,
    local: LocalMap,
    now: float = 0.0,
    gcs_id: int = 0,
    ground_z: int = 1,
) -> GcsRoute:
    """Order the pending explorer meetings to minimize GCS waiting.

    Each visit must be reached within its tolerance window; waiting before
    a meeting fires is the cost. Small tours are solved exactly, larger
    ones by cheapest feasible insertion in deadline order. A visit no
    ordering can serve is dropped for renegotiation, never silently bent.
    """
    travel = TravelCache(local, z_lock=ground_z)
    visits = sorted(pending, key=lambda v: (v[2], v[0]))
    n = len(visits)
    if n == 0:
        return GcsRoute()

    best_order: tuple[int, ...] | None = None
    best_cost: tuple[float, list[float]] | None = None
    if n <= EXACT_TOUR_LIMIT:
        # Largest serveable subset first, then minimal idle, then lexicographic.
        for size in range(n, 0, -1):
            for subset in itertools.combinations(range(n), size):
                for order in itertools.permutations(subset):
                    res = _tour_cost(order, visits, pose, speed, delta_bar, now, travel)
                    if res is not None and (best_cost is None or res[0] < best_cost[0] - _EPS):
                        best_order, best_cost = order, res
            if best_order is not None:
                break
    else:
        order: list[int] = []
        for k in range(n):
            placed = None
            for where in range(len(order) + 1):
                cand = tuple(order[:where] + [k] + order[where:])
                res = _tour_cost(cand, visits, pose, speed, delta_bar, now, travel)
                if res is not None and (placed is None or res[0] < placed[1][0] - _EPS):
                    placed = (cand, res)
            if placed is not None:
                order = list(placed[0])
        best_order = tuple(order)
        best_cost = _tour_cost(best_order, visits, pose, speed, delta_bar, now, travel)

    route = GcsRoute()
    if best_order is None or best_cost is None:
        route.dropped = [v[0] for v in visits]
        return route
    idle, arrivals = best_cost
    served = set(best_order)
    route.idle = idle
    route.arrivals = arrivals
    for k in best_order:
        exp_id, p_c, t_c = visits[k]
        ev = MeetingEvent(location=p_c, tick=t_c, participants=(exp_id, gcs_id))
        route.visits.append((ev, (t_c - delta_bar, t_c + delta_bar)))
    route.dropped = [visits[k][0] for k in range(n) if k not in served]
    return route


def split_inspectors(volumes: dict[int, float], n_inspectors: int) -> dict[int, int]:
    """Share inspectors across subgroups proportional to assigned box volume.

    Floor division first; leftovers go one each to the largest volumes.
    """
    total = sum(volumes.values())
    ids = sorted(volumes)
    if total <= 0:
        counts = {i: 0 for i in ids}
    else:
        counts = {i: int(n_inspectors * volumes[i] / total) for i in ids}
    rest = n_inspectors - sum(counts.values())
    for i in sorted(ids, key=lambda i: (-volumes[i], i)):
        if rest <= 0:
            break
        counts[i] += 1
        rest -= 1
    return counts


def rolling_assign(
    bboxes: list[BBox],
    subgroups: dict[int, Vox],
    n_inspectors_total: int,
    *,
    local: LocalMap,
    init: bool = False,
) -> tuple[dict[int, int], dict[int, int]]:
    """Hand each asking subgroup the nearest unassigned box.

    At initialization every explorer gets one and the inspector pool is
    split by box volume. Online, the single reporting subgroup gets the
    next nearest box (whole subgroup moves together). Explorers that find
    no box left are omitted — they go to standby.
    """
    open_boxes = [b for b in bboxes if b.status == "unassigned"]
    assignment: dict[int, int] = {}
    travel = TravelCache(local)
    for exp_id in sorted(subgroups):
        if not open_boxes:
            break
        pose = subgroups[exp_id]
        best = None
        for b in open_boxes:
            entry = bbox_entry_point(b, pose, local, travel)
            if entry is None:
                continue
            d = travel.dist_vox(pose, entry)
            if best is None or (d, b.id) < best[:2]:
                best = (d, b.id, b)
        if best is None:
            continue
        assignment[exp_id] = best[1]
        open_boxes.remove(best[2])
    counts: dict[int, int] = {}
    if init:
        by_vol = {e: float(next(b.volume for b in bboxes if b.id == bid))
                  for e, bid in assignment.items()}
        counts = split_inspectors(by_vol, n_inspectors_total)
    return assignment, counts


def fleet_size_guideline(volumes: list[float], v_base: float) -> tuple[int, int, int]:
    """Sizing rule of thumb: a station and an explorer per box, inspectors by volume."""
    if v_base <= 0:
        raise ValueError("baseline volume must be positive")
    n = len(volumes)
    inspectors = sum(math.ceil(2.0 * v / v_base) for v in volumes)
    return (n, n, inspectors) if n else (0, 0, 0)


def retime_for_energy(
    t_c_next: float,
    t_c_prev: float,
    e_max: float,
    e_min: float,
    alpha: float,
    beta: float,
    round_trip: float,
    t_b: float | None = None,
) -> float:
    """Push a meeting later to make room for the recharge cycles before it.

    Energy is converted to ticks through the per-tick drain, so the cycle
    count is a plain ceiling of interval over usable battery window.
    """
    if not (e_max > e_min > 0) or beta <= 0 or alpha <= 0:
        raise ValueError("energy parameters must satisfy e_max > e_min > 0, alpha, beta > 0")
    if t_b is None:
        t_b = (e_max - e_min) / beta
    window = (e_max - e_min) / alpha
    cycles = math.ceil(max(0.0, t_c_next - t_c_prev) / window - _EPS)
    return t_c_next + cycles * (t_b + round_trip)


def gcs_energy_delay(
    gap: float,
    e_now: float,
    e_max: float,
    e_min: float,
    alpha: float,
    beta: float,
    round_trip: float,
    t_b: float | None = None,
) -> float:
    """Extra delay the ground station needs before a gap it cannot cover.

    Zero when current charge already lasts the whole gap.
    """
    if (e_now - e_min) / alpha >= gap - _EPS:
        return 0.0
    if t_b is None:
        t_b = (e_max - e_min) / beta
    window = (e_max - e_min) / alpha
    cycles = math.ceil((gap - e_now / alpha) / window - _EPS)
    return max(0, cycles) * (round_trip + t_b)
