"""Deterministic tick engine driving the whole fleet.

One tick is one simulated step of the mission clock. Each tick runs the same
phase order: movement (with conflict resolution), sensing and detection,
meetings and exchanges, mismatch handling, energy, scheduled failures,
planning triggers, metrics. All iteration is in sorted robot id order and
every random draw comes from a named stream of the run seed, so identical
configs replay bit-identically.

Robots execute plans as soon as possible; planned arrival times exist for
coordination, not as movement gates. Meetings therefore fire as soon as both
sides are present and linked, and lateness beyond the tolerance is what the
mismatch rules punish.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from voxfleet import _kernels
from voxfleet import gcs as gcs_ops
from voxfleet import rng as rng_mod
from voxfleet.comm import (
    BBoxStatusRecord,
    DataStore,
    FeatureRecord,
    LinkSpec,
    PlanRecord,
    exchange,
    link_available,
)
from voxfleet.explore import (
    FRONTIER_CAP,
    PURPOSE_CHARGE,
    PURPOSE_INSPECT,
    PURPOSE_MEET,
    PURPOSE_TRAVEL,
    PURPOSE_WAIT,
    LocalPlan,
    PlanStep,
    ff3e,
)
from voxfleet.subgroup import (
    MEETING_CONFIRMED,
    MEETING_MET,
    MEETING_MISSED,
    MeetingEvent,
    TravelCache,
    soei,
)
from voxfleet.world import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    BBox,
    Feature,
    FeatureStatus,
    LocalMap,
    Vox,
    WorldGrid,
    euclid,
    frontiers,
    octree_partition,
    raycast_los,
    sense,
)

_EPS = 1e-9

ROLE_GCS = "gcs"
ROLE_EXPLORER = "explorer"
ROLE_INSPECTOR = "inspector"

ACTIVE = "active"
CHARGING = "charging"
FAILED = "failed"
STANDBY = "standby"

MODE_SLEI3D = "slei3d"
MODE_FIX = "slei-fix"
MODE_PRE = "slei-pre"

# A robot blocked this many consecutive ticks replans around the blocker.
BLOCKED_REPLAN_AFTER = 3
# A ground station parks within this many voxels of the meeting point.
MEET_RADIUS_VOX = 2.0


@dataclass
class RobotSpec:
    id: int
    role: str
    pose: Vox
    speed: float  # meters per tick
    sensor_range: float  # meters
    link_range: float  # meters


@dataclass
class RobotState:
    """One robot as the engine sees it."""

    id: int
    role: str
    pose: Vox
    speed: float
    sensor_range: float
    link: LinkSpec
    plan: LocalPlan
    store: DataStore
    energy: float
    status: str = ACTIVE
    subgroup: int = -1
    # Explorers only: voxels this robot has provably had clear sight of.
    swept: np.ndarray | None = None


@dataclass
class SimConfig:
    world: WorldGrid
    bboxes: list[BBox]
    features: list[Feature]
    robots: list[RobotSpec]
    seed: int = 0
    delta_bar: int = 10
    mode: str = MODE_SLEI3D
    energy_enabled: bool = False
    priors_enabled: bool = True
    failures: list[tuple[int, int]] = field(default_factory=list)
    tick_budget: int | None = None
    soei_period: int = 5
    n_samples: int = 5
    frontier_cap: int = FRONTIER_CAP
    initial_window: int = 20
    replan_period: int = 5
    fix_interval: int | None = None
    max_wait: int | None = None
    fov_range: float = 8.0
    e_max: float = 100.0
    e_min: float = 25.0
    alpha: float = 1.0
    beta: float = 10.0
    stations: list[Vox] = field(default_factory=list)
    prior_free_min_dim: float = 16.0
    ground_z: int = 1

    def resolved_tick_budget(self) -> int:
        if self.tick_budget is not None:
            return self.tick_budget
        r_vox = max(1.0, min(r.sensor_range for r in self.robots) / self.world.resolution)
        vol = sum(b.volume for b in self.bboxes) or int(np.prod(self.world.dims))
        nx, ny, nz = self.world.dims
        return int(20 * (vol / (r_vox * r_vox) + 4 * (nx + ny + nz)))

    def validate(self) -> None:
        w = self.world
        if min(w.dims) < 3:
            raise ValueError("world must be at least 3 voxels in every axis")
        if self.mode not in (MODE_SLEI3D, MODE_FIX, MODE_PRE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.delta_bar < 1:
            raise ValueError("mismatch tolerance must be at least 1 tick")
        if self.soei_period < 1 or self.replan_period < 1 or self.initial_window < 1:
            raise ValueError("protocol periods must be positive")
        roles = [r.role for r in self.robots]
        if roles.count(ROLE_GCS) < 1:
            raise ValueError("need at least one ground station")
        if roles.count(ROLE_EXPLORER) < 1:
            raise ValueError("need at least one explorer")
        ids = [r.id for r in self.robots]
        if len(set(ids)) != len(ids):
            raise ValueError("robot ids must be unique")
        poses = [r.pose for r in self.robots]
        if len(set(poses)) != len(poses):
            raise ValueError("robots cannot share a start voxel")
        for r in self.robots:
            if r.role not in (ROLE_GCS, ROLE_EXPLORER, ROLE_INSPECTOR):
                raise ValueError(f"robot {r.id} has unknown role {r.role!r}")
            if not w.in_bounds(r.pose) or w.cells[r.pose] == OCCUPIED:
                raise ValueError(f"robot {r.id} starts out of bounds or inside a wall")
            if r.speed <= 0 or r.sensor_range <= 0 or r.link_range <= 0:
                raise ValueError(f"robot {r.id} has a non-positive speed or range")
            if r.speed > w.resolution + _EPS:
                raise ValueError(
                    f"robot {r.id} speed {r.speed} exceeds one voxel per tick "
                    f"(resolution {w.resolution})")
            if r.role == ROLE_GCS and r.pose[2] != self.ground_z:
                raise ValueError(f"ground station {r.id} must start at z={self.ground_z}")
        if self.priors_enabled:
            if not self.bboxes:
                raise ValueError("priors mode needs at least one search box")
            box_ids = [b.id for b in self.bboxes]
            if len(set(box_ids)) != len(box_ids):
                raise ValueError("search box ids must be unique")
            for b in self.bboxes:
                if not w.in_bounds(b.min_corner) or not w.in_bounds(b.max_corner):
                    raise ValueError(f"box {b.id} exceeds world bounds")
            for f in self.features:
                if not any(b.contains(f.position) for b in self.bboxes):
                    raise ValueError(f"feature {f.id} lies outside every search box")
        fids = [f.id for f in self.features]
        if len(set(fids)) != len(fids):
            raise ValueError("feature ids must be unique")
        for f in self.features:
            if not w.in_bounds(f.position) or w.cells[f.position] != FREE:
                raise ValueError(f"feature {f.id} viewpoint voxel is not free")
            if f.inspect_duration < 1:
                raise ValueError(f"feature {f.id} inspect duration must be >= 1 tick")
        if self.energy_enabled:
            if not (self.e_max > self.e_min > 0) or self.alpha <= 0 or self.beta <= 0:
                raise ValueError("energy parameters must satisfy e_max > e_min > 0 and positive rates")
            if not self.stations:
                raise ValueError("energy mode needs at least one charging station")
            for s in self.stations:
                if not w.in_bounds(s) or w.cells[s] == OCCUPIED:
                    raise ValueError(f"charging station {s} is not a passable voxel")
        known = set(ids)
        for rid, tick in self.failures:
            if rid not in known:
                raise ValueError(f"failure schedule names unknown robot {rid}")
            if tick < 0:
                raise ValueError("failure ticks must be non-negative")


def _canon(x):
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if not math.isfinite(v):
            return "inf" if v > 0 else "-inf"
        return round(v, 6)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _canon(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    if isinstance(x, set):
        return [_canon(v) for v in sorted(x)]
    return x


class EventLog:
    """Append-only record stream with a canonical JSON form."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def emit(self, tick: int, actor: int | str, kind: str, **payload) -> None:
        rec = {"tick": tick, "actor": actor, "kind": kind}
        rec.update(payload)
        self.records.append(_canon(rec))

    def to_jsonl(self) -> str:
        if not self.records:
            return ""
        return "\n".join(json.dumps(r, sort_keys=True, separators=(",", ":"))
                         for r in self.records) + "\n"


@dataclass
class Metrics:
    finish_tick: int = -1
    completed: bool = False
    finish_rate: float = 0.0
    total_idle: float = 0.0
    idle_by_robot: dict[int, dict[str, float]] = field(default_factory=dict)
    gcs_explorer_meetings: int = 0
    explorer_inspector_meetings: int = 0
    meetings_per_bbox: float = 0.0
    bytes_per_meeting: list[int] = field(default_factory=list)
    overlap_rate: float = 0.0
    distance_by_robot: dict[int, float] = field(default_factory=dict)
    min_energy: float = math.inf
    recharge_events: int = 0
    feature_timeline: dict[int, dict[str, int]] = field(default_factory=dict)
    tick_rows: list[dict] = field(default_factory=list)
    meeting_rows: list[dict] = field(default_factory=list)
    soei_rows: list[dict] = field(default_factory=list)
    incomplete_reason: str = ""

    def summary(self) -> dict:
        return _canon({
            "finish_tick": self.finish_tick,
            "completed": self.completed,
            "finish_rate": self.finish_rate,
            "total_idle": self.total_idle,
            "idle_by_robot": self.idle_by_robot,
            "gcs_explorer_meetings": self.gcs_explorer_meetings,
            "explorer_inspector_meetings": self.explorer_inspector_meetings,
            "meetings_per_bbox": self.meetings_per_bbox,
            "bytes_total": sum(self.bytes_per_meeting),
            "bytes_per_meeting": self.bytes_per_meeting,
            "overlap_rate": self.overlap_rate,
            "distance_by_robot": self.distance_by_robot,
            "min_energy": self.min_energy if math.isfinite(self.min_energy) else None,
            "recharge_events": self.recharge_events,
            "feature_timeline": self.feature_timeline,
            "incomplete_reason": self.incomplete_reason,
        })


@dataclass
class ScheduledMeeting:
    """Engine-side bookkeeping around one meeting event."""

    event: MeetingEvent
    kind: str  # "gcs" | "inspector"
    bbox_id: int = -1
    arrivals: dict[int, float] = field(default_factory=dict)
    fired_tick: int = -1
    bytes: int = 0
    stuck: int = 0  # ticks both sides present without a usable link
    created_tick: int = -1
    # Refire guard: a meeting agreed on the spot must not fire again in place.
    # It becomes live once the explorer leaves, or once the slot itself is due.
    departed: bool = False


@dataclass
class _Exec:
    cursor: int = 0
    leg: list[Vox] | None = None
    leg_i: int = 0
    progress: float = 0.0
    blocked: int = 0
    # Voxels held by a standing queue; accumulated while stuck so reroutes
    # do not oscillate between two blocked entrances, cleared on movement.
    masks: set = field(default_factory=set)
    inspect_left: int = -1  # -1 = not inspecting
    station: Vox | None = None


@dataclass
class _ExplorerBrain:
    gcs_id: int = -1
    bbox_id: int = -1
    bbox_start: int = 0
    meeting: ScheduledMeeting | None = None
    soei_queue: list[ScheduledMeeting] = field(default_factory=list)
    pending_handoff: dict[int, tuple[list[int], LocalPlan]] = field(default_factory=dict)
    requeued: set[int] = field(default_factory=set)
    inspectors: list[int] = field(default_factory=list)
    retry_misses: dict[int, int] = field(default_factory=dict)
    dirty: bool = True
    pre_queue: list[int] = field(default_factory=list)
    complete_reported: set[int] = field(default_factory=set)
    # Skip recomputing sight coverage while pose, map and box are unchanged.
    sweep_pose: Vox | None = None
    sweep_rev: int = -1
    sweep_bbox: int = -1


@dataclass
class _GcsBrain:
    explorers: list[int] = field(default_factory=list)
    pending: dict[int, ScheduledMeeting] = field(default_factory=dict)
    route_order: list[int] = field(default_factory=list)
    park_for: dict[int, Vox] = field(default_factory=dict)
    park_block: dict[int, set] = field(default_factory=dict)
    bbox_state: dict[int, str] = field(default_factory=dict)
    bbox_owner: dict[int, int] = field(default_factory=dict)
    bbox_seq: dict[int, int] = field(default_factory=dict)
    bbox_start: dict[int, int] = field(default_factory=dict)
    priority_bbox: int = -1
    orphans: list[int] = field(default_factory=list)
    fix_spot: dict[int, Vox] = field(default_factory=dict)
    home: Vox = (0, 0, 0)


class Simulation:
    """Full mission state: call step() until done, or run() for the loop."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.cfg = config
        self.truth = config.world
        self.tick = 0
        self.log = EventLog()
        self.metrics = Metrics()
        self.budget = config.resolved_tick_budget()
        self.features: dict[int, Feature] = {f.id: f for f in config.features}

        if config.priors_enabled:
            self.bboxes = {b.id: b for b in config.bboxes}
        else:
            interior = {(x, y, z)
                        for x in range(1, self.truth.dims[0] - 1)
                        for y in range(1, self.truth.dims[1] - 1)
                        for z in range(1, self.truth.dims[2] - 1)}
            boxes = octree_partition(interior, config.prior_free_min_dim,
                                     self.truth.resolution)
            self.bboxes = {b.id: b for b in boxes}
            self.log.emit(0, "world", "prior_free_partition", n_boxes=len(boxes))
        self._bbox_tuple = tuple(sorted(self.bboxes.values(), key=lambda b: b.id))
        self.feature_bbox: dict[int, int] = {}
        for f in sorted(self.features.values(), key=lambda f: f.id):
            for b in self._bbox_tuple:
                if b.contains(f.position):
                    self.feature_bbox[f.id] = b.id
                    break

        self.robots: dict[int, RobotState] = {}
        for spec in sorted(config.robots, key=lambda s: s.id):
            local = LocalMap(owner=spec.id, dims=self.truth.dims,
                             resolution=self.truth.resolution)
            self.robots[spec.id] = RobotState(
                id=spec.id, role=spec.role, pose=spec.pose, speed=spec.speed,
                sensor_range=spec.sensor_range,
                link=LinkSpec(range_m=spec.link_range),
                plan=LocalPlan(robot_id=spec.id, issue_tick=0),
                store=DataStore(owner=spec.id, local_map=local),
                energy=config.e_max)
        self.exec: dict[int, _Exec] = {rid: _Exec() for rid in self.robots}
        self.exp_brain: dict[int, _ExplorerBrain] = {}
        self.gcs_brain: dict[int, _GcsBrain] = {}

        self.explorer_ids = sorted(r.id for r in self.robots.values()
                                   if r.role == ROLE_EXPLORER)
        self.inspector_ids = sorted(r.id for r in self.robots.values()
                                    if r.role == ROLE_INSPECTOR)
        self.gcs_ids = sorted(r.id for r in self.robots.values() if r.role == ROLE_GCS)

        self._seen_count = np.zeros(self.truth.dims, dtype=np.uint8)
        self._failures = sorted(config.failures, key=lambda ft: (ft[1], ft[0]))
        self._negotiation_queue: list[int] = []
        self._exchanged_pairs: set[tuple[int, int]] = set()
        self._last_sync: dict[tuple[int, int], tuple[int, int]] = {}
        self._store_rev: dict[int, int] = {rid: 0 for rid in self.robots}
        self._collected: set[int] = set()
        self._escape: dict[int, tuple[int, TravelCache]] = {}
        self.incomplete_reason = ""

        self._bootstrap()

    # ------------------------------------------------------------------ setup

    def _bootstrap(self) -> None:
        for e in self.explorer_ids:
            self.exp_brain[e] = _ExplorerBrain()
            self.robots[e].swept = np.zeros(self.truth.dims, dtype=np.uint8)
        for i, g in enumerate(self.gcs_ids):
            brain = _GcsBrain(home=self.robots[g].pose)
            brain.explorers = [e for k, e in enumerate(self.explorer_ids)
                               if k % len(self.gcs_ids) == i]
            self.gcs_brain[g] = brain
            for e in brain.explorers:
                self.exp_brain[e].gcs_id = g
        for b in self._bbox_tuple:
            for g in self.gcs_ids:
                self.gcs_brain[g].bbox_state[b.id] = "unassigned"
                self.gcs_brain[g].bbox_seq[b.id] = 0

        for j in self.inspector_ids:
            r = self.robots[j]
            r.plan = self._stationary_plan(j, r.pose, 0.0)
            self._sync_plan_record(j)
        self._initial_assignment()
        # The mission starts with the fleet co-located: one full sync.
        ids = sorted(self.robots)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                exchange(self.robots[a].store, self.robots[b].store)

    def _initial_assignment(self) -> None:
        cfg = self.cfg
        gcs0 = self.gcs_ids[0]
        boxes = list(self._bbox_tuple)

        if cfg.mode == MODE_PRE:
            order = sorted(self.bboxes)
            for k, e in enumerate(self.explorer_ids):
                self.exp_brain[e].pre_queue = list(order[k::len(self.explorer_ids)])
            assignment = {}
            for e in self.explorer_ids:
                q = self.exp_brain[e].pre_queue
                if q:
                    assignment[e] = q.pop(0)
            volumes = {e: float(self.bboxes[b].volume) for e, b in assignment.items()}
            counts = gcs_ops.split_inspectors(volumes, len(self.inspector_ids))
        else:
            assignment, counts = gcs_ops.rolling_assign(
                boxes, {e: self.robots[e].pose for e in self.explorer_ids},
                len(self.inspector_ids),
                local=self.robots[gcs0].store.local_map, init=True)

        pool = list(self.inspector_ids)
        for e in sorted(assignment):
            take = counts.get(e, 0)
            members, pool = pool[:take], pool[take:]
            self.exp_brain[e].inspectors = members
            for j in members:
                self.robots[j].subgroup = e
        if pool and assignment:
            first = sorted(assignment)[0]
            for j in pool:
                self.exp_brain[first].inspectors.append(j)
                self.robots[j].subgroup = first
            self.exp_brain[first].inspectors.sort()

        for e in sorted(assignment):
            self._assign_bbox(e, assignment[e], tick=0)
        for e in self.explorer_ids:
            if e not in assignment:
                self.robots[e].status = STANDBY
                self.log.emit(0, e, "standby")

        if cfg.mode == MODE_FIX:
            spots = self._fix_spots(self.robots[gcs0].pose, len(self.explorer_ids))
            for k, e in enumerate(self.explorer_ids):
                for g in self.gcs_ids:
                    self.gcs_brain[g].fix_spot[e] = spots[k]

        for e in sorted(assignment):
            self._negotiate_next_meeting(e, first=True)
        for g in self.gcs_ids:
            self._recompute_gcs_route(g)

    def _fix_spots(self, home: Vox, n: int) -> list[Vox]:
        """n distinct passable voxels beside the stationary ground station.

        Spots stay within meeting radius of home or the link check at firing
        time could never pass.
        """
        cands = []
        z = home[2]
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                if dx == 0 and dy == 0:
                    continue
                p = (home[0] + dx, home[1] + dy, z)
                if euclid(p, home) > MEET_RADIUS_VOX + _EPS:
                    continue
                if self.truth.in_bounds(p) and self.truth.cells[p] != OCCUPIED:
                    cands.append((euclid(p, home), p))
        cands.sort()
        if len(cands) < n:
            raise ValueError("not enough free voxels around the ground station for fixed meetings")
        return [p for _, p in cands[:n]]

    # ------------------------------------------------------------- primitives

    def _bump(self, rid: int) -> None:
        self._store_rev[rid] += 1

    def _pair_link(self, a: RobotState, b: RobotState) -> LinkSpec:
        return LinkSpec(range_m=min(a.link.range_m, b.link.range_m))

    def _linked(self, a: RobotState, b: RobotState) -> bool:
        return link_available(self.truth, a.pose, b.pose, self._pair_link(a, b))

    def _stationary_plan(self, rid: int, pose: Vox, now: float) -> LocalPlan:
        return LocalPlan(robot_id=rid, issue_tick=int(now),
                         steps=[PlanStep(pos=pose, arrival=now, purpose=PURPOSE_WAIT)])

    def _record_to_plan(self, rec: PlanRecord) -> LocalPlan:
        steps = []
        for k, wp in enumerate(rec.waypoints):
            purpose = rec.purposes[k] if k < len(rec.purposes) else PURPOSE_TRAVEL
            dwell = rec.dwells[k] if k < len(rec.dwells) else 0.0
            steps.append(PlanStep(pos=wp, arrival=rec.arrivals[k],
                                  purpose=purpose, dwell=dwell))
        return LocalPlan(robot_id=rec.robot_id, issue_tick=rec.issue_tick, steps=steps)

    def _sync_plan_record(self, rid: int) -> None:
        r = self.robots[rid]
        r.store.plans[rid] = r.plan.to_record()
        self._bump(rid)

    def _known_plan(self, viewer: int, subject: int) -> LocalPlan:
        rec = self.robots[viewer].store.plans.get(subject)
        if rec is None or not rec.waypoints:
            return self._stationary_plan(subject, self.robots[subject].pose,
                                         float(self.tick))
        return self._record_to_plan(rec)

    def _eta(self, local: LocalMap, a: Vox, b: Vox, speed: float,
             z_lock: int = -1) -> float:
        return TravelCache(local, z_lock).ticks(a, b, speed)

    def _mark_collected(self) -> None:
        store = self.robots[self.gcs_ids[0]].store
        for fid in sorted(store.results):
            if fid in self._collected or fid not in self.features:
                continue
            self._collected.add(fid)
            f = self.features[fid]
            f.advance(FeatureStatus.COLLECTED)
            self._timeline(fid, FeatureStatus.COLLECTED)
            self.log.emit(self.tick, self.gcs_ids[0], "collected", feature=fid)

    def _timeline(self, fid: int, status: FeatureStatus) -> None:
        self.metrics.feature_timeline.setdefault(fid, {})[status.name.lower()] = self.tick

    # --------------------------------------------------------------- movement

    def _phase_move(self) -> None:
        intents: dict[int, Vox] = {}
        costs: dict[int, float] = {}
        poses = {r.pose: r.id for r in self.robots.values() if r.status != FAILED}
        for rid in sorted(self.robots):
            r = self.robots[rid]
            ex = self.exec[rid]
            if r.status == FAILED:
                continue
            if r.status == STANDBY and ex.cursor >= len(r.plan.steps):
                continue  # parked; may still carry a sidestep after a nudge
            if r.status == CHARGING:
                if ex.station is not None and r.pose != ex.station:
                    self._want_step_towards(r, ex, ex.station, intents, costs)
                continue
            self._advance_cursor(r, ex)
            target = self._current_target(r, ex)
            if target is None or r.pose == target:
                self._account_hold(r, ex)
                continue
            self._want_step_towards(r, ex, target, intents, costs)
            if ex.leg is not None:
                self._account_move(r, ex)

        moved = self._resolve_conflicts(intents, poses)
        for rid in sorted(self.robots):
            r = self.robots[rid]
            ex = self.exec[rid]
            if rid in moved:
                step_cost = costs[rid]
                self.metrics.distance_by_robot[rid] = (
                    self.metrics.distance_by_robot.get(rid, 0.0)
                    + step_cost * self.truth.resolution)
                r.pose = intents[rid]
                ex.leg_i += 1
                ex.progress -= step_cost
                ex.blocked = 0
            elif rid in intents:
                # Standing in a queue must not bank speed for later; the
                # robot may finish the contested step, nothing beyond it.
                ex.progress = min(ex.progress, costs[rid])
                ex.blocked += 1
                if ex.blocked >= BLOCKED_REPLAN_AFTER:
                    if not self._nudge_idle_occupant(intents[rid]):
                        self._replan_leg(r, ex, mask=intents[rid])
                    ex.blocked = 0
            self._after_move(r, ex)

    def _advance_cursor(self, r: RobotState, ex: _Exec) -> None:
        steps = r.plan.steps
        while ex.cursor < len(steps):
            st = steps[ex.cursor]
            if r.pose != st.pos:
                return
            if st.purpose in (PURPOSE_INSPECT, PURPOSE_MEET, PURPOSE_CHARGE):
                return  # held here until the relevant phase releases it
            ex.cursor += 1
            ex.leg = None

    def _current_target(self, r: RobotState, ex: _Exec) -> Vox | None:
        if ex.cursor >= len(r.plan.steps):
            return None
        return r.plan.steps[ex.cursor].pos

    def _want_step_towards(self, r: RobotState, ex: _Exec, target: Vox,
                           intents: dict[int, Vox], costs: dict[int, float]) -> None:
        if (ex.leg is None or ex.leg_i >= len(ex.leg) - 1
                or ex.leg[-1] != target or ex.leg[ex.leg_i] != r.pose):
            self._replan_leg(r, ex, target=target)
        if ex.leg is None or ex.leg_i >= len(ex.leg) - 1:
            return
        nxt = ex.leg[ex.leg_i + 1]
        if self.truth.cells[nxt] == OCCUPIED:
            # Contact with an unsensed wall: learn it and route around.
            r.store.local_map.cells[nxt] = OCCUPIED
            self._bump(r.id)
            self._replan_leg(r, ex, target=target)
            if ex.leg is None or ex.leg_i >= len(ex.leg) - 1:
                return
            nxt = ex.leg[ex.leg_i + 1]
            if self.truth.cells[nxt] == OCCUPIED:
                return
        cost = euclid(r.pose, nxt)
        # Remainder banks across voxel boundaries, so a long leg runs at the
        # robot's real pace instead of paying a whole tick per boundary.
        ex.progress += r.speed / self.truth.resolution
        if ex.progress >= cost - _EPS:
            intents[r.id] = nxt
            costs[r.id] = cost

    def _replan_leg(self, r: RobotState, ex: _Exec, target: Vox | None = None,
                    mask: Vox | None = None) -> None:
        if target is None:
            target = self._current_target(r, ex)
        if target is None:
            ex.leg = None
            return
        cells = r.store.local_map.cells
        restore = None
        if mask is not None and mask != target and cells[mask] != OCCUPIED:
            restore = (mask, cells[mask])
            cells[mask] = OCCUPIED
        z_lock = self.cfg.ground_z if r.role == ROLE_GCS else -1
        path = _kernels.astar_path(cells, r.pose[0], r.pose[1], r.pose[2],
                                   target[0], target[1], target[2], z_lock)
        if restore is not None:
            cells[restore[0]] = restore[1]
        ex.leg = [tuple(p) for p in path] if path else None
        ex.leg_i = 0
        if ex.leg is None and r.role == ROLE_EXPLORER:
            self.exp_brain[r.id].dirty = True

    def _nudge_idle_occupant(self, v: Vox) -> bool:
        """Move a parked robot off a voxel someone else needs.

        Only a robot with nowhere to be gets pushed; anyone holding a
        meeting, inspection, or charge stays put. Returns True when a
        sidestep was arranged.
        """
        blocker = next((rr for rr in self.robots.values()
                        if rr.status != FAILED and rr.pose == v), None)
        if blocker is None:
            return False
        if blocker.status == CHARGING:
            # Plugged in (or committed to getting there); a sidestep would
            # never execute because charging movement ignores the plan.
            return False
        exb = self.exec[blocker.id]
        steps = blocker.plan.steps
        if exb.cursor < len(steps):
            st = steps[exb.cursor]
            if blocker.pose != st.pos:
                return False  # already heading elsewhere
            if st.purpose in (PURPOSE_MEET, PURPOSE_INSPECT, PURPOSE_CHARGE):
                return False
        if blocker.role == ROLE_GCS and self._gcs_current_visit(blocker.id) is not None:
            return False
        occupied = {rr.pose for rr in self.robots.values() if rr.status != FAILED}
        if blocker.role == ROLE_GCS:
            deltas = [(dx, dy, 0) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                      if (dx, dy) != (0, 0)]
        else:
            deltas = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                      for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
        for d in sorted(deltas):
            q = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
            if not self.truth.in_bounds(q) or self.truth.cells[q] == OCCUPIED:
                continue
            if blocker.store.local_map.cells[q] == OCCUPIED or q in occupied:
                continue
            # Append rather than replace: executed steps stay in the record,
            # which peers read to reason about this robot's work history.
            blocker.plan.steps.append(PlanStep(pos=q, arrival=float(self.tick + 1),
                                               purpose=PURPOSE_TRAVEL))
            exb.cursor = len(blocker.plan.steps) - 1
            exb.leg = None
            self._sync_plan_record(blocker.id)
            self.log.emit(self.tick, blocker.id, "nudged", to=q)
            return True
        return False

    def _resolve_conflicts(self, intents: dict[int, Vox],
                           poses: dict[Vox, int]) -> set[int]:
        """Iterative confirmation: lower ids claim first, vacated voxels free up."""
        confirmed: set[int] = set()
        claimed: dict[Vox, int] = {}
        changed = True
        while changed:
            changed = False
            for rid in sorted(intents):
                if rid in confirmed:
                    continue
                v = intents[rid]
                if v in claimed:
                    continue
                occupant = poses.get(v)
                if occupant is not None and occupant != rid and occupant not in confirmed:
                    continue
                claimed[v] = rid
                confirmed.add(rid)
                changed = True
        return confirmed

    def _after_move(self, r: RobotState, ex: _Exec) -> None:
        if r.status != ACTIVE or ex.cursor >= len(r.plan.steps):
            return
        st = r.plan.steps[ex.cursor]
        if r.pose != st.pos:
            return
        if st.purpose == PURPOSE_INSPECT:
            if ex.inspect_left < 0:
                ex.inspect_left = max(1, int(st.dwell))
            ex.inspect_left -= 1
            if ex.inspect_left <= 0:
                self._finish_inspection(r, st.pos)
                ex.inspect_left = -1
                ex.cursor += 1
                ex.leg = None
        elif st.purpose == PURPOSE_MEET:
            for sm in self._meetings_of(r.id):
                if sm.event.location == st.pos and r.id not in sm.arrivals:
                    sm.arrivals[r.id] = float(self.tick)

    def _meetings_of(self, rid: int) -> list[ScheduledMeeting]:
        r = self.robots[rid]
        out: list[ScheduledMeeting] = []
        if r.role == ROLE_EXPLORER:
            brain = self.exp_brain[rid]
            if brain.meeting is not None:
                out.append(brain.meeting)
            out.extend(brain.soei_queue)
        elif r.role == ROLE_GCS:
            out.extend(self.gcs_brain[rid].pending.values())
        else:
            e = r.subgroup
            if e in self.exp_brain:
                out.extend(sm for sm in self.exp_brain[e].soei_queue
                           if sm.event.participants[1] == rid)
        return out

    def _finish_inspection(self, r: RobotState, pos: Vox) -> None:
        # A repeat inspection is allowed: a result can die with its carrier,
        # in which case the feature comes back around with a new assignee.
        for fid in sorted(self.features):
            f = self.features[fid]
            if f.position != pos or f.status >= FeatureStatus.COLLECTED:
                continue
            rec = r.store.features.get(fid)
            if rec is None or rec.assigned_to != r.id:
                continue
            f.advance(FeatureStatus.INSPECTED)
            self._timeline(fid, FeatureStatus.INSPECTED)
            r.store.results[fid] = f.result_payload
            r.store.record_feature(replace(rec, status=FeatureStatus.INSPECTED))
            self._bump(r.id)
            self.log.emit(self.tick, r.id, "inspected", feature=fid)
            return

    # ------------------------------------------------------------- accounting

    def _account_move(self, r: RobotState, ex: _Exec) -> None:
        """Travel that only serves coordination counts as idle."""
        if r.status != ACTIVE:
            return
        idle = self.metrics.idle_by_robot.setdefault(r.id, {"travel": 0.0, "wait": 0.0})
        if r.role == ROLE_INSPECTOR:
            idle["travel"] += 1.0
        elif r.role == ROLE_EXPLORER:
            st = r.plan.steps[ex.cursor] if ex.cursor < len(r.plan.steps) else None
            if st is not None and st.purpose == PURPOSE_MEET:
                idle["travel"] += 1.0

    def _account_hold(self, r: RobotState, ex: _Exec) -> None:
        if r.status != ACTIVE:
            return
        idle = self.metrics.idle_by_robot.setdefault(r.id, {"travel": 0.0, "wait": 0.0})
        if r.role == ROLE_GCS:
            cur = self._gcs_current_visit(r.id)
            if cur is not None and euclid(r.pose, cur.event.location) <= MEET_RADIUS_VOX + _EPS:
                if r.id not in cur.arrivals:
                    cur.arrivals[r.id] = float(self.tick)
                idle["wait"] += 1.0
            return
        steps = r.plan.steps
        if ex.cursor < len(steps) and r.pose == steps[ex.cursor].pos:
            if steps[ex.cursor].purpose == PURPOSE_MEET:
                idle["wait"] += 1.0
            return
        if r.role == ROLE_INSPECTOR and ex.cursor >= len(steps):
            e = r.subgroup
            if e in self.exp_brain and any(
                    sm.event.participants[1] == r.id
                    for sm in self.exp_brain[e].soei_queue):
                idle["wait"] += 1.0

    # ---------------------------------------------------------------- sensing

    def _phase_sense(self) -> None:
        for rid in sorted(self.robots):
            r = self.robots[rid]
            if r.status == FAILED:
                continue
            new = sense(self.truth, r.store.local_map, r.pose, r.sensor_range,
                        self._bbox_tuple)
            if new:
                self._bump(rid)
            if r.role != ROLE_EXPLORER:
                continue
            if new:
                for v in new:
                    if self._seen_count[v] < 255:
                        self._seen_count[v] += 1
                self.exp_brain[rid].dirty = True
            if r.status == ACTIVE:
                self._update_sweep(r)
                self._detect_features(r)

    def _update_sweep(self, r: RobotState) -> None:
        """Credit voxels of the owned box that had a clear sight line here.

        "Clear" is stricter than detection: every crossed voxel must be
        known Free, so a credited voxel would also have passed the
        detection ray from the same pose on the same map. Credits earned
        while owning some other box do not count toward this one, because
        detection ignores foreign features and such a pass can overlook
        them.
        """
        brain = self.exp_brain[r.id]
        if brain.bbox_id < 0 or r.swept is None:
            return
        rev = self._store_rev[r.id]
        if (r.pose == brain.sweep_pose and rev == brain.sweep_rev
                and brain.bbox_id == brain.sweep_bbox):
            return
        brain.sweep_pose = r.pose
        brain.sweep_rev = rev
        brain.sweep_bbox = brain.bbox_id
        # Scratch copy so out-of-box hits are discarded; seeding it with the
        # existing credits lets the kernel skip rays already proven clear.
        scratch = r.swept.copy()
        _kernels.sweep_update(r.store.local_map.cells, scratch,
                              r.pose[0], r.pose[1], r.pose[2],
                              self.cfg.fov_range / self.truth.resolution)
        b = self.bboxes[brain.bbox_id]
        sl = (slice(b.min_corner[0], b.max_corner[0] + 1),
              slice(b.min_corner[1], b.max_corner[1] + 1),
              slice(b.min_corner[2], b.max_corner[2] + 1))
        np.bitwise_or(r.swept[sl], scratch[sl], out=r.swept[sl])

    def _sweep_targets(self, e: int, limit: int | None = None,
                       travel: TravelCache | None = None) -> list[Vox]:
        """Standing spots that would credit still-unswept inspectable voxels.

        A voxel needs crediting when it is known Free, or known Occupied
        with a Free face neighbour (a surface something could sit on).
        Sealed pockets and voxels whose every viewpoint is unreachable are
        exempt: nobody can be asked to look at them.
        """
        r = self.robots[e]
        brain = self.exp_brain[e]
        if brain.bbox_id < 0 or r.swept is None:
            return []
        b = self.bboxes[brain.bbox_id]
        local = r.store.local_map
        cells = local.cells
        sl = (slice(b.min_corner[0], b.max_corner[0] + 1),
              slice(b.min_corner[1], b.max_corner[1] + 1),
              slice(b.min_corner[2], b.max_corner[2] + 1))
        box = cells[sl]
        free = box == FREE
        near_free = np.zeros_like(free)
        near_free[1:, :, :] |= free[:-1, :, :]
        near_free[:-1, :, :] |= free[1:, :, :]
        near_free[:, 1:, :] |= free[:, :-1, :]
        near_free[:, :-1, :] |= free[:, 1:, :]
        near_free[:, :, 1:] |= free[:, :, :-1]
        near_free[:, :, :-1] |= free[:, :, 1:]
        todo = (free | ((box == OCCUPIED) & near_free)) & (r.swept[sl] == 0)
        if not todo.any():
            return []
        if travel is None:
            travel = TravelCache(local)
        out: list[Vox] = []
        seen: set[Vox] = set()
        base = b.min_corner
        for x, y, z in zip(*np.nonzero(todo)):
            q = (int(x) + base[0], int(y) + base[1], int(z) + base[2])
            if cells[q] == FREE:
                cand = [q]
            else:
                cand = sorted(
                    n for n in ((q[0] - 1, q[1], q[2]), (q[0] + 1, q[1], q[2]),
                                (q[0], q[1] - 1, q[2]), (q[0], q[1] + 1, q[2]),
                                (q[0], q[1], q[2] - 1), (q[0], q[1], q[2] + 1))
                    if local.in_bounds(n) and cells[n] == FREE)
            vp = next((v for v in cand if v in seen
                       or math.isfinite(travel.dist_vox(r.pose, v))), None)
            if vp is None or vp in seen:
                continue
            seen.add(vp)
            out.append(vp)
            if limit is not None and len(out) >= limit:
                break
        return out

    def _detect_features(self, r: RobotState) -> None:
        """Record any visible feature of the explorer's own box.

        Detection is physical and repeatable: an explorer that never heard of
        a feature records it even when a since-lost teammate found it first.
        """
        brain = self.exp_brain[r.id]
        if brain.bbox_id < 0:
            return
        max_vox = self.cfg.fov_range / self.truth.resolution
        local = r.store.local_map
        for fid in sorted(self.features):
            if self.feature_bbox.get(fid) != brain.bbox_id:
                continue
            if fid in r.store.features or fid in r.store.results:
                continue
            f = self.features[fid]
            c = f.aoi_centroid()
            if not local.in_bounds(c) or euclid(r.pose, c) > max_vox + _EPS:
                continue
            if not raycast_los(local, r.pose, c):
                continue
            f.advance(FeatureStatus.FITTED)
            self._timeline(fid, FeatureStatus.FITTED)
            r.store.record_feature(FeatureRecord(
                feature_id=fid, position=f.position, status=FeatureStatus.FITTED,
                inspect_duration=f.inspect_duration, priority=f.priority,
                fitted_by=r.id))
            self._bump(r.id)
            self.log.emit(self.tick, r.id, "fitted", feature=fid, bbox=brain.bbox_id)

    # --------------------------------------------------------------- meetings

    def _phase_meetings(self) -> None:
        self._exchanged_pairs = set()
        # Ground stations share a backbone regardless of position.
        for i, a in enumerate(self.gcs_ids):
            for b in self.gcs_ids[i + 1:]:
                moved = exchange(self.robots[a].store, self.robots[b].store)
                self._exchanged_pairs.add((a, b))
                if moved:
                    self._bump(a)
                    self._bump(b)
        if len(self.gcs_ids) > 1:
            self._mark_collected()

        for e in self.explorer_ids:
            sm = self.exp_brain[e].meeting
            if (sm is not None and sm.fired_tick < 0 and not sm.departed
                    and self.robots[e].pose != sm.event.location):
                sm.departed = True
        for e in self.explorer_ids:
            self._try_fire_gcs_meeting(e)
        for e in self.explorer_ids:
            self._try_fire_inspector_meetings(e)
        self._spontaneous_exchanges()

    def _do_exchange(self, a: RobotState, b: RobotState) -> int:
        moved = exchange(a.store, b.store)
        pair = (min(a.id, b.id), max(a.id, b.id))
        self._exchanged_pairs.add(pair)
        if moved:
            self._bump(a.id)
            self._bump(b.id)
        self._last_sync[pair] = (self._store_rev[a.id], self._store_rev[b.id])
        if a.role == ROLE_EXPLORER and b.role == ROLE_INSPECTOR:
            self._post_exchange_inspector(a, b)
        elif b.role == ROLE_EXPLORER and a.role == ROLE_INSPECTOR:
            self._post_exchange_inspector(b, a)
        if ROLE_GCS in (a.role, b.role):
            self._mark_collected()
        return moved

    def _post_exchange_inspector(self, explorer: RobotState, insp: RobotState) -> None:
        """Plan hand-off and adoption ride on any store merge, however it happened."""
        brain = self.exp_brain[explorer.id]
        handoff = brain.pending_handoff.pop(insp.id, None)
        if handoff is not None:
            fids, plan = handoff
            insp.plan = plan
            ex = self.exec[insp.id]
            ex.leg = None
            ex.inspect_left = -1
            for fid in fids:
                rec = explorer.store.features[fid]
                seq = rec.assign_seq + (1 if rec.assigned_to != insp.id else 0)
                newrec = replace(rec, status=FeatureStatus.ASSIGNED,
                                 assigned_to=insp.id, assign_seq=seq)
                explorer.store.record_feature(newrec)
                insp.store.record_feature(newrec)
                self.features[fid].advance(FeatureStatus.ASSIGNED)
                self._timeline(fid, FeatureStatus.ASSIGNED)
            brain.requeued.difference_update(fids)
            # The delivered route was built on the explorer's (possibly stale)
            # copy of the inspector's plan, so old step indices mean nothing
            # here. Resume at the first inspection this robot still owes.
            ex.cursor = self._resume_index(insp, plan)
            rec_plan = plan.to_record()
            insp.store.plans[insp.id] = rec_plan
            explorer.store.plans[insp.id] = rec_plan
            self._bump(explorer.id)
            self._bump(insp.id)
            self.log.emit(self.tick, explorer.id, "handoff", inspector=insp.id,
                          features=sorted(fids))
        brain.retry_misses[insp.id] = 0
        old = insp.subgroup
        if old != explorer.id:
            old_alive = (old in self.exp_brain
                         and self.robots[old].status != FAILED)
            if not old_alive:
                self._adopt_inspector(explorer.id, insp.id)

    def _resume_index(self, insp: RobotState, plan: LocalPlan) -> int:
        """First step of a freshly delivered route that still needs doing.

        Inspection steps for features this robot already finished (per its
        own merged store) are skipped along with the positioning that led
        to them; with nothing left the cursor parks past the end.
        """
        for i, st in enumerate(plan.steps):
            if st.purpose != PURPOSE_INSPECT:
                continue
            for rec in insp.store.features.values():
                if (rec.position == st.pos
                        and rec.status < FeatureStatus.INSPECTED):
                    return i
        return len(plan.steps)

    def _adopt_inspector(self, explorer_id: int, insp_id: int) -> None:
        old = self.robots[insp_id].subgroup
        self.robots[insp_id].subgroup = explorer_id
        eb = self.exp_brain[explorer_id]
        if insp_id not in eb.inspectors:
            eb.inspectors.append(insp_id)
            eb.inspectors.sort()
        if old in self.exp_brain and insp_id in self.exp_brain[old].inspectors:
            self.exp_brain[old].inspectors.remove(insp_id)
        for g in self.gcs_ids:
            if insp_id in self.gcs_brain[g].orphans:
                self.gcs_brain[g].orphans.remove(insp_id)
        self.log.emit(self.tick, explorer_id, "adopted_inspector", inspector=insp_id)

    def _try_fire_gcs_meeting(self, e: int) -> None:
        brain = self.exp_brain[e]
        sm = brain.meeting
        if sm is None or sm.fired_tick >= 0:
            return
        exp = self.robots[e]
        g = self.robots[brain.gcs_id]
        if exp.status == FAILED or g.status == FAILED:
            return
        p_c = sm.event.location
        if exp.pose != p_c or euclid(g.pose, p_c) > MEET_RADIUS_VOX + _EPS:
            return
        if not sm.departed and float(self.tick) < sm.event.tick - _EPS:
            return  # agreed in place and never left: wait for the slot itself
        if not self._linked(exp, g):
            sm.stuck += 1
            return
        sm.arrivals.setdefault(e, float(self.tick))
        sm.arrivals.setdefault(g.id, float(self.tick))
        sm.bytes = self._do_exchange(exp, g)
        sm.fired_tick = self.tick
        sm.event.status = MEETING_MET
        self.metrics.gcs_explorer_meetings += 1
        self.metrics.bytes_per_meeting.append(sm.bytes)
        gcs_arr = sm.arrivals[g.id]
        self.metrics.meeting_rows.append({
            "tick_planned": sm.event.tick, "fired": self.tick,
            "explorer": e, "gcs": g.id, "bbox": sm.bbox_id,
            "explorer_arrival": sm.arrivals[e],
            "gcs_arrival": gcs_arr,
            "gcs_idle": max(0.0, sm.event.tick - gcs_arr),
            "bytes": sm.bytes,
        })
        self.log.emit(self.tick, g.id, "meeting_fired", meeting="gcs", explorer=e,
                      planned=sm.event.tick, bytes=sm.bytes)
        self._negotiation_queue.append(e)

    def _try_fire_inspector_meetings(self, e: int) -> None:
        exp = self.robots[e]
        if exp.status != ACTIVE:
            return
        brain = self.exp_brain[e]
        for sm in list(brain.soei_queue):
            j = sm.event.participants[1]
            insp = self.robots[j]
            if insp.status == FAILED:
                continue
            pair = (min(e, j), max(e, j))
            already = pair in self._exchanged_pairs
            if not already and not self._linked(exp, insp):
                continue
            if not already:
                sm.bytes = self._do_exchange(exp, insp)
            sm.fired_tick = self.tick
            sm.event.status = MEETING_MET
            brain.soei_queue.remove(sm)
            self._drop_meet_step(e, sm.event.location)
            self.metrics.explorer_inspector_meetings += 1
            self.metrics.bytes_per_meeting.append(sm.bytes)
            self.log.emit(self.tick, e, "meeting_fired", meeting="inspector",
                          inspector=j, planned=sm.event.tick, bytes=sm.bytes)

    def _drop_meet_step(self, rid: int, loc: Vox) -> None:
        r = self.robots[rid]
        ex = self.exec[rid]
        for k in range(ex.cursor, len(r.plan.steps)):
            st = r.plan.steps[k]
            if st.purpose == PURPOSE_MEET and st.pos == loc:
                del r.plan.steps[k]
                ex.leg = None
                break
        self._sync_plan_record(rid)

    def _spontaneous_exchanges(self) -> None:
        """At most one opportunistic merge per robot per tick, by id priority."""
        busy = {rid for pair in self._exchanged_pairs for rid in pair}
        ids = [rid for rid in sorted(self.robots)
               if self.robots[rid].status != FAILED]
        for i, a in enumerate(ids):
            if a in busy:
                continue
            for b in ids[i + 1:]:
                if b in busy:
                    continue
                pair = (a, b)
                if self._last_sync.get(pair) == (self._store_rev[a], self._store_rev[b]):
                    continue  # nothing new on either side since the last merge
                ra, rb = self.robots[a], self.robots[b]
                if not self._linked(ra, rb):
                    continue
                moved = self._do_exchange(ra, rb)
                if moved:
                    self.log.emit(self.tick, a, "spontaneous_exchange", peer=b,
                                  bytes=moved)
                busy.add(a)
                busy.add(b)
                break

    # --------------------------------------------------------------- mismatch

    def _phase_mismatch(self) -> None:
        for e in list(self.explorer_ids):
            brain = self.exp_brain[e]
            sm = brain.meeting
            if sm is not None and sm.fired_tick < 0:
                self._mismatch_gcs_meeting(e, sm)
            for sm in list(brain.soei_queue):
                self._mismatch_inspector_meeting(e, sm)

    def _mismatch_gcs_meeting(self, e: int, sm: ScheduledMeeting) -> None:
        now = self.tick
        g_id = self.exp_brain[e].gcs_id
        g = self.robots[g_id]
        # The station parks beside the point, not on it, so its presence is
        # judged by radius rather than by a recorded arrival.
        gcs_present = (g.status != FAILED
                       and euclid(g.pose, sm.event.location) <= MEET_RADIUS_VOX + _EPS)
        if sm.stuck >= 3 and e in sm.arrivals and gcs_present:
            # Both present but the link never comes up: park somewhere else.
            gb = self.gcs_brain[g_id]
            gb.park_block.setdefault(e, set()).add(g.pose)
            gb.park_for[e] = self._park_voxel(g, sm.event.location,
                                              gb.park_block[e])
            self.exec[g_id].leg = None
            sm.stuck = 0
            self.log.emit(now, g_id, "repark", explorer=e)
            return
        if now <= sm.event.tick:
            return
        # An arrival stops counting as attendance once its owner is dead; a
        # corpse at the rendezvous must not read as "explorer present".
        arrivals = {rid: t for rid, t in sm.arrivals.items()
                    if self.robots[rid].status != FAILED}
        if gcs_present:
            arrivals.setdefault(g_id, float(now))
        action = mismatch(sm.event, float(now), arrivals,
                          delta_bar=float(self.cfg.delta_bar),
                          waiter_role="gcs" if gcs_present else "explorer_gcs",
                          max_wait=self.cfg.max_wait)
        if action != "declare_failed":
            return
        sm.event.status = MEETING_MISSED
        self.log.emit(now, g_id, "meeting_missed", explorer=e, planned=sm.event.tick)
        if self.robots[e].status != FAILED:
            self._fail_robot(e, reason="missed meeting")
        recover_explorer_failure(e, self)

    def _mismatch_inspector_meeting(self, e: int, sm: ScheduledMeeting) -> None:
        now = self.tick
        if sm.fired_tick >= 0 or now <= sm.event.tick + self.cfg.delta_bar:
            return
        exp = self.robots[e]
        # Judge once the explorer is standing at the point, or when the
        # meeting has gone stale enough that it clearly never will be.
        if exp.pose != sm.event.location and now <= sm.event.tick + 3 * self.cfg.delta_bar:
            return
        brain = self.exp_brain[e]
        j = sm.event.participants[1]
        action = mismatch(sm.event, float(now), sm.arrivals,
                          delta_bar=float(self.cfg.delta_bar),
                          waiter_role="explorer_inspector",
                          prior_misses=brain.retry_misses.get(j, 0))
        if action == "wait":
            return
        brain.retry_misses[j] = brain.retry_misses.get(j, 0) + 1
        sm.event.status = MEETING_MISSED
        brain.soei_queue.remove(sm)
        self._drop_meet_step(e, sm.event.location)
        self.log.emit(now, e, "meeting_missed", inspector=j, planned=sm.event.tick,
                      miss_count=brain.retry_misses[j])
        if action == "inspector_failed" or self.robots[j].status == FAILED:
            self._declare_inspector_failed(e, j)
        else:
            self._schedule_retry_meeting(e, j)

    def _schedule_retry_meeting(self, e: int, j: int) -> None:
        """Second attempt where the inspector's known route ends."""
        plan = self._known_plan(e, j)
        end = plan.end_pose(self.robots[j].pose)
        r = self.robots[e]
        local = r.store.local_map
        spot = gcs_ops._nudge_to_passable(local, end)
        eta = self._eta(local, r.pose, spot, r.speed) if spot is not None else math.inf
        if spot is None or not math.isfinite(eta):
            self._declare_inspector_failed(e, j)
            return
        t = max(float(self.tick) + eta, plan.end_tick(float(self.tick)))
        ev = MeetingEvent(location=spot, tick=t, participants=(e, j),
                          status=MEETING_CONFIRMED)
        self.exp_brain[e].soei_queue.append(ScheduledMeeting(event=ev, kind="inspector"))
        r.plan.steps.insert(self.exec[e].cursor,
                            PlanStep(pos=spot, arrival=t, purpose=PURPOSE_MEET))
        self.exec[e].leg = None
        self._sync_plan_record(e)
        self.log.emit(self.tick, e, "retry_meeting", inspector=j, when=t)

    def _declare_inspector_failed(self, e: int, j: int) -> None:
        if self.robots[j].status != FAILED:
            self._fail_robot(j, reason="missed meetings")
        brain = self.exp_brain[e]
        if j in brain.inspectors:
            brain.inspectors.remove(j)
        brain.pending_handoff.pop(j, None)
        store = self.robots[e].store
        requeued = [fid for fid in sorted(store.features)
                    if store.features[fid].assigned_to == j
                    and fid not in store.results]
        brain.requeued.update(requeued)
        self.log.emit(self.tick, e, "inspector_failed", inspector=j,
                      requeued=requeued)

    # ----------------------------------------------------------------- energy

    def _phase_energy(self) -> None:
        if not self.cfg.energy_enabled:
            return
        cfg = self.cfg
        for rid in sorted(self.robots):
            r = self.robots[rid]
            ex = self.exec[rid]
            if r.status in (FAILED, STANDBY):
                continue
            if r.status == CHARGING:
                if r.pose == ex.station:
                    r.energy = min(cfg.e_max, r.energy + cfg.beta)
                    if r.energy >= cfg.e_max - _EPS:
                        r.status = ACTIVE
                        ex.station = None
                        ex.leg = None
                        self.log.emit(self.tick, rid, "recharged", energy=r.energy)
                else:
                    r.energy -= cfg.alpha
            else:
                cur = (r.plan.steps[ex.cursor]
                       if ex.cursor < len(r.plan.steps) else None)
                at_charge_step = (cur is not None and cur.purpose == PURPOSE_CHARGE
                                  and r.pose == cur.pos)
                if at_charge_step:
                    r.energy = min(cfg.e_max, r.energy + cfg.beta)
                    if r.energy >= cfg.e_max - _EPS:
                        ex.cursor += 1
                        ex.leg = None
                        self.log.emit(self.tick, rid, "recharged", energy=r.energy)
                else:
                    r.energy -= cfg.alpha
                    heading_to_charge = cur is not None and cur.purpose == PURPOSE_CHARGE
                    # Holding at a rendezvous outranks topping up: breaking a
                    # meeting gets a robot declared failed, and the floor
                    # leaves enough margin to charge right after.
                    at_meet = (cur is not None and cur.purpose == PURPOSE_MEET
                               and r.pose == cur.pos)
                    want = (r.energy <= cfg.e_min + _EPS
                            and ex.inspect_left < 0 and not heading_to_charge
                            and not at_meet)
                    # Survival overrides every hold: once the battery barely
                    # covers the escape route, nothing else matters.
                    esc = self._escape_ticks(r)
                    # 10 ticks of slack absorbs right-of-way stalls on the
                    # way in and a detour around a busy pad.
                    flee = (math.isfinite(esc)
                            and r.energy <= cfg.alpha * (esc + 10.0) + _EPS)
                    if r.status == ACTIVE and (want or flee):
                        self._divert_to_station(r, ex)
            self.metrics.min_energy = min(self.metrics.min_energy, r.energy)
            if r.energy <= 0 and r.status != FAILED:
                self._fail_robot(rid, reason="battery depleted")

    def _escape_travel(self, r: RobotState) -> TravelCache:
        """Travel queries over this robot's map with unseen voxels blocked.

        Escape budgeting must not gamble on shortcuts through unknown space;
        the trail a robot drove in on is always known free, so a finite,
        executable route back to a charger exists whenever one exists at all.
        """
        rev = self._store_rev[r.id]
        hit = self._escape.get(r.id)
        if hit is not None and hit[0] == rev:
            return hit[1]
        cells = r.store.local_map.cells.copy()
        cells[cells == UNKNOWN] = OCCUPIED
        masked = LocalMap(owner=r.id, dims=r.store.local_map.dims,
                          resolution=r.store.local_map.resolution, cells=cells)
        travel = TravelCache(masked,
                             self.cfg.ground_z if r.role == ROLE_GCS else -1)
        self._escape[r.id] = (rev, travel)
        return travel

    def _escape_ticks(self, r: RobotState) -> float:
        if not self.cfg.stations:
            return math.inf
        travel = self._escape_travel(r)
        # Station-sourced fields are reused across poses; the metric is
        # symmetric, so one field answers every tick of this map revision.
        return min(travel.ticks(s, r.pose, r.speed)
                   for s in sorted(self.cfg.stations))

    def _divert_to_station(self, r: RobotState, ex: _Exec) -> None:
        travel = self._escape_travel(r)
        claimed = {self.exec[o].station for o in sorted(self.robots)
                   if o != r.id and self.robots[o].status == CHARGING}
        best = None
        for s in sorted(self.cfg.stations):
            d = travel.dist_vox(s, r.pose)
            if not math.isfinite(d):
                continue
            rank = (s in claimed, d, s)
            if best is None or rank < best:
                best = rank
        if best is None:
            return
        ex.station = best[2]
        ex.leg = None
        r.status = CHARGING
        self.metrics.recharge_events += 1
        self.log.emit(self.tick, r.id, "recharge_trip", station=best[2],
                      energy=r.energy)

    def _insert_recharge_stops(self, plan: LocalPlan, e_now: float, speed: float,
                               local: LocalMap) -> LocalPlan:
        """Predictively splice charging round-trips into a long route."""
        cfg = self.cfg
        if not cfg.energy_enabled or not cfg.stations or not plan.steps:
            return plan
        travel = TravelCache(local)
        out: list[PlanStep] = []
        e = e_now
        t_prev = float(self.tick)
        at: Vox | None = None
        shift = 0.0
        for st in plan.steps:
            arrival = st.arrival + shift
            drain = max(0.0, arrival - t_prev) * cfg.alpha + st.dwell * cfg.alpha
            if e - drain <= cfg.e_min and at is not None:
                best = None
                for s in sorted(cfg.stations):
                    d = travel.ticks(at, s, speed)
                    back = travel.ticks(s, st.pos, speed)
                    if math.isfinite(d) and math.isfinite(back) and (
                            best is None or d + back < best[0]):
                        best = (d + back, s, d, back)
                if best is not None:
                    _, s, to_s, from_s = best
                    charge = (cfg.e_max - max(0.0, e - to_s * cfg.alpha)) / cfg.beta
                    out.append(PlanStep(pos=s, arrival=t_prev + to_s,
                                        purpose=PURPOSE_CHARGE, dwell=charge))
                    detour = to_s + charge + from_s - travel.ticks(at, st.pos, speed)
                    shift += max(0.0, detour)
                    arrival = st.arrival + shift
                    e = cfg.e_max - from_s * cfg.alpha
                    out.append(PlanStep(pos=st.pos, arrival=arrival,
                                        purpose=st.purpose, dwell=st.dwell))
                    e -= st.dwell * cfg.alpha
                    at = st.pos
                    t_prev = arrival + st.dwell
                    continue
            e -= drain
            out.append(PlanStep(pos=st.pos, arrival=arrival, purpose=st.purpose,
                                dwell=st.dwell))
            at = st.pos
            t_prev = arrival + st.dwell
        return LocalPlan(robot_id=plan.robot_id, issue_tick=plan.issue_tick, steps=out)

    # --------------------------------------------------------------- failures

    def _phase_failures(self) -> None:
        for rid, t in self._failures:
            if t == self.tick and self.robots[rid].status != FAILED:
                self._fail_robot(rid, reason="scheduled")

    def _fail_robot(self, rid: int, reason: str) -> None:
        r = self.robots[rid]
        r.status = FAILED
        self.log.emit(self.tick, rid, "failed", reason=reason)
        if r.role == ROLE_EXPLORER:
            survivors = [e for e in self.explorer_ids
                         if self.robots[e].status != FAILED]
            if not survivors and not self._mission_done():
                self.incomplete_reason = "no surviving explorer"

    # --------------------------------------------------------------- planning

    def _phase_planning(self) -> None:
        for e in sorted(set(self._negotiation_queue)):
            self._negotiate_at_meeting(e)
        self._negotiation_queue = []
        for e in self.explorer_ids:
            if self.robots[e].status != ACTIVE:
                continue
            if self.tick > 0 and self.tick % self.cfg.soei_period == 0:
                self._maybe_trigger_soei(e)
            self._maybe_replan_exploration(e)
            self._deadline_guard(e)
        for g in self.gcs_ids:
            self._gcs_follow_route(g)

    # -- explorer side

    def _fitted_unassigned(self, e: int) -> list[int]:
        store = self.robots[e].store
        brain = self.exp_brain[e]
        held = {fid for fids, _ in brain.pending_handoff.values() for fid in fids}
        out = []
        for fid in sorted(store.features):
            if fid in held or fid in store.results:
                continue
            rec = store.features[fid]
            fresh = rec.status == FeatureStatus.FITTED
            orphaned = fid in brain.requeued and rec.status < FeatureStatus.INSPECTED
            if not (fresh or orphaned):
                continue
            if self.feature_bbox.get(fid) != brain.bbox_id:
                continue
            out.append(fid)
        return out

    def _assigned_in_flight(self, e: int) -> bool:
        """True while some box feature is handed over but not yet collected.

        The window floors treat this like pending results: the explorer
        still owes the subgroup a pick-up round before the box can close.
        """
        store = self.robots[e].store
        brain = self.exp_brain[e]
        for fid in sorted(store.features):
            if self.feature_bbox.get(fid) != brain.bbox_id:
                continue
            rec = store.features[fid]
            if (rec.status == FeatureStatus.ASSIGNED
                    and fid not in store.results and fid not in brain.requeued):
                return True
        return False

    def _pending_results(self, e: int) -> dict[int, int]:
        """Per-inspector count of results believed ready for pick-up.

        A result is expected once the known plan's inspection step for that
        feature has run out its dwell; scheduling collection before the
        work exists just burns meetings. (A record that reaches Inspected
        in this store always arrives together with its result, so only
        Assigned records can be pending.)
        """
        store = self.robots[e].store
        brain = self.exp_brain[e]
        now = float(self.tick)
        plans: dict[int, LocalPlan] = {}
        out: dict[int, int] = {}
        for fid in sorted(store.features):
            rec = store.features[fid]
            if rec.status != FeatureStatus.ASSIGNED:
                continue
            if fid in store.results or rec.assigned_to < 0 or fid in brain.requeued:
                continue
            j = rec.assigned_to
            if j not in brain.inspectors or self.robots[j].status == FAILED:
                continue
            plan = plans.get(j)
            if plan is None:
                plan = plans[j] = self._known_plan(e, j)
            for st in plan.steps:
                if (st.purpose == PURPOSE_INSPECT and st.pos == rec.position
                        and st.arrival + st.dwell <= now + _EPS):
                    out[j] = out.get(j, 0) + 1
                    break
        return out

    def _maybe_trigger_soei(self, e: int) -> None:
        brain = self.exp_brain[e]
        if brain.soei_queue or brain.pending_handoff:
            return
        f_plus_ids = self._fitted_unassigned(e)
        pending = self._pending_results(e)
        if not f_plus_ids and not pending:
            return
        r = self.robots[e]
        alive = [j for j in brain.inspectors if self.robots[j].status != FAILED]
        if not alive:
            return
        plans = {j: self._known_plan(e, j) for j in alive}
        feats = [self.features[fid] for fid in f_plus_ids]
        gcs_meet = None
        if brain.meeting is not None and brain.meeting.fired_tick < 0:
            gcs_meet = (brain.meeting.event.location, brain.meeting.event.tick)
        link = LinkSpec(range_m=min([r.link.range_m]
                                    + [self.robots[j].link.range_m for j in alive]))
        plan = soei(
            feats, alive, plans,
            explorer_id=e, pose=r.pose, speed=r.speed,
            local=r.store.local_map, now=float(self.tick),
            link=link,
            speeds={j: self.robots[j].speed for j in alive},
            n_samples=self.cfg.n_samples,
            pending_results=pending,
            gcs_meeting=gcs_meet,
            rng=rng_mod.stream_rng(self.cfg.seed, "ga", e, self.tick),
        )
        self.metrics.soei_rows.append({
            "tick": self.tick, "explorer": e, "chosen": list(plan.chosen),
            "idle": plan.idle,
            "n_features": sum(len(v) for v in plan.allocation.values()),
        })
        self.log.emit(self.tick, e, "soei", chosen=list(plan.chosen), idle=plan.idle,
                      allocation=plan.allocation, unserved=plan.unserved)
        if not plan.chosen:
            return
        for ev in plan.meetings:
            ev.confirm()
            brain.soei_queue.append(ScheduledMeeting(event=ev, kind="inspector"))
        for j in sorted(plan.chosen):
            fids = plan.allocation.get(j, [])
            if not fids:
                continue
            upd = plan.updated_plans.get(j)
            if upd is None:
                continue
            if self.cfg.energy_enabled:
                upd = self._insert_recharge_stops(upd, self.robots[j].energy,
                                                  self.robots[j].speed,
                                                  r.store.local_map)
            # Held locally until the rendezvous delivers it; recording it as
            # the inspector's plan before then would poison retry targeting.
            brain.pending_handoff[j] = (fids, upd)
        self._rebuild_explorer_plan(e)

    def _maybe_replan_exploration(self, e: int) -> None:
        brain = self.exp_brain[e]
        if brain.meeting is None or brain.soei_queue:
            return
        if not (brain.dirty or (self.tick > 0 and self.tick % self.cfg.replan_period == 0)):
            return
        self._rebuild_explorer_plan(e)
        brain.dirty = False

    def _deadline_guard(self, e: int) -> None:
        """Abort the sortie when the rendezvous is about to slip away.

        Blocking and sidesteps push execution behind the plan's arrival
        times; once even the direct run no longer makes the agreed time,
        everything else is dropped so the meeting itself survives.
        """
        brain = self.exp_brain[e]
        sm = brain.meeting
        if sm is None or sm.fired_tick >= 0:
            return
        r = self.robots[e]
        p_c = sm.event.location
        ex = self.exec[e]
        steps = r.plan.steps
        if (steps and ex.cursor == len(steps) - 1
                and steps[-1].pos == p_c and steps[-1].purpose == PURPOSE_MEET):
            return  # already running straight at it
        eta = self._eta(r.store.local_map, r.pose, p_c, r.speed)
        if not math.isfinite(eta):
            return  # a trim cannot help; the mismatch rules take over
        now = float(self.tick)
        if now + eta + 1.0 <= sm.event.tick + _EPS:
            return
        r.plan = LocalPlan(robot_id=e, issue_tick=self.tick, steps=[
            PlanStep(pos=p_c, arrival=now + eta, purpose=PURPOSE_MEET)])
        ex.cursor = 0
        ex.leg = None
        self._sync_plan_record(e)
        self.log.emit(self.tick, e, "sortie_trimmed",
                      meeting=sm.event.tick, eta=now + eta)

    def _rebuild_explorer_plan(self, e: int) -> None:
        """Recompute the committed route: rendezvous chain first, then frontier work."""
        r = self.robots[e]
        brain = self.exp_brain[e]
        now = float(self.tick)
        steps: list[PlanStep] = []
        at, t = r.pose, now
        local = r.store.local_map
        for sm in brain.soei_queue:
            eta = self._eta(local, at, sm.event.location, r.speed)
            if not math.isfinite(eta):
                continue
            t = max(t + eta, sm.event.tick)
            steps.append(PlanStep(pos=sm.event.location, arrival=t,
                                  purpose=PURPOSE_MEET))
            at = sm.event.location
        if brain.meeting is not None and brain.meeting.fired_tick < 0:
            steps.extend(self._exploration_tail(e, at, t, brain.meeting))
        r.plan = LocalPlan(robot_id=e, issue_tick=self.tick, steps=steps)
        ex = self.exec[e]
        ex.cursor = 0
        ex.leg = None
        self._sync_plan_record(e)

    def _exploration_tail(self, e: int, pose: Vox, now: float,
                          meeting: ScheduledMeeting) -> list[PlanStep]:
        r = self.robots[e]
        brain = self.exp_brain[e]
        local = r.store.local_map
        meet = (meeting.event.location, meeting.event.tick)

        def straight_run(frm: Vox, t0: float) -> PlanStep:
            eta = self._eta(local, frm, meet[0], r.speed)
            return PlanStep(pos=meet[0],
                            arrival=t0 + (eta if math.isfinite(eta) else 0.0),
                            purpose=PURPOSE_MEET)

        if brain.bbox_id < 0:
            return [straight_run(pose, now)]
        bbox = self.bboxes[brain.bbox_id]
        goals = frontiers(local, bbox)
        if not goals:
            # Mapped out, but possibly not all looked at from here. Chase the
            # viewpoints that still owe a sweep the same way as frontiers.
            goals = self._sweep_targets(e, limit=64)
        if goals:
            plan = ff3e(pose, goals, meet, r.speed, local, now=now,
                        issue_tick=self.tick, robot_id=e)
            if plan.steps:
                return plan.steps
            return [straight_run(pose, now)]  # deadline too tight: just show up
        steps: list[PlanStep] = []
        t, at = now, pose
        travel = TravelCache(local)
        if local.explored_volume.get(bbox.id, 0) < bbox.volume:
            entry = gcs_ops.bbox_entry_point(bbox, pose, local, travel)
            if entry is not None and entry != pose:
                eta = travel.ticks(pose, entry, r.speed)
                back = travel.ticks(entry, meet[0], r.speed)
                if math.isfinite(eta) and math.isfinite(back) \
                        and now + eta + back <= meet[1] + _EPS:
                    t = now + eta
                    steps.append(PlanStep(pos=entry, arrival=t, purpose=PURPOSE_TRAVEL))
                    at = entry
        steps.append(straight_run(at, t))
        return steps

    # -- ground station side

    def _bbox_complete_for(self, e: int) -> bool:
        """Explorer-side completion: mapped, nothing left to reach, all served."""
        brain = self.exp_brain[e]
        if brain.bbox_id < 0:
            return False
        r = self.robots[e]
        local = r.store.local_map
        bbox = self.bboxes[brain.bbox_id]
        if local.explored_volume.get(bbox.id, 0) <= 0:
            return False
        if self._fitted_unassigned(e) or self._pending_results(e) or brain.pending_handoff:
            return False
        # Assigned work still in flight counts too: walking away now would
        # strand the result on an inspector nobody plans to meet again.
        for fid in sorted(r.store.features):
            if self.feature_bbox.get(fid) != brain.bbox_id:
                continue
            if (r.store.features[fid].status < FeatureStatus.INSPECTED
                    or fid not in r.store.results):
                return False
        travel = TravelCache(local)
        front = frontiers(local, bbox)
        if any(math.isfinite(travel.dist_vox(r.pose, f)) for f in front):
            return False
        # No reachable frontier does not yet mean nothing left to look at:
        # ground another robot mapped first leaves no frontier here, but the
        # owner still has to pass its own eyes over every surface.
        return not self._sweep_targets(e, limit=1, travel=travel)

    def _assign_bbox(self, e: int, bbox_id: int, tick: int) -> None:
        brain = self.exp_brain[e]
        brain.bbox_id = bbox_id
        brain.bbox_start = tick
        brain.dirty = True
        self.bboxes[bbox_id].status = "assigned"
        for g in self.gcs_ids:
            gb = self.gcs_brain[g]
            gb.bbox_state[bbox_id] = "assigned"
            gb.bbox_owner[bbox_id] = e
            gb.bbox_seq[bbox_id] += 1
            gb.bbox_start.setdefault(bbox_id, tick)
            self.robots[g].store.record_bbox(BBoxStatusRecord(
                bbox_id=bbox_id, seq=gb.bbox_seq[bbox_id], status="assigned",
                explorer_id=e))
            self._bump(g)
        self.robots[e].store.record_bbox(BBoxStatusRecord(
            bbox_id=bbox_id, seq=self.gcs_brain[brain.gcs_id].bbox_seq[bbox_id],
            status="assigned", explorer_id=e))
        self._bump(e)
        self.log.emit(tick, brain.gcs_id, "bbox_assigned", bbox=bbox_id, explorer=e)

    def _mark_bbox_complete(self, e: int, bid: int, note: str = "") -> None:
        self.bboxes[bid].status = "complete"
        for g in self.gcs_ids:
            gb = self.gcs_brain[g]
            gb.bbox_state[bid] = "complete"
            gb.bbox_seq[bid] += 1
            self.robots[g].store.record_bbox(BBoxStatusRecord(
                bbox_id=bid, seq=gb.bbox_seq[bid], status="complete", explorer_id=e))
            self._bump(g)
        payload = {"bbox": bid, "explorer": e}
        if note:
            payload["note"] = note
        self.log.emit(self.tick, self.exp_brain[e].gcs_id, "bbox_complete", **payload)

    def _negotiate_at_meeting(self, e: int) -> None:
        """Everything the pair decides while standing together."""
        brain = self.exp_brain[e]
        gb = self.gcs_brain[brain.gcs_id]
        now = self.tick
        brain.meeting = None
        gb.pending.pop(e, None)

        if brain.bbox_id >= 0 and self._bbox_complete_for(e) \
                and brain.bbox_id not in brain.complete_reported:
            bid = brain.bbox_id
            brain.complete_reported.add(bid)
            self._mark_bbox_complete(e, bid)
            brain.bbox_id = -1
            nxt = self._next_bbox_for(e, gb)
            if nxt is not None:
                if gb.priority_bbox == nxt:
                    gb.priority_bbox = -1
                    for j in sorted(gb.orphans):
                        if self.robots[j].status != FAILED:
                            self._adopt_inspector(e, j)
                    gb.orphans = []
                self._assign_bbox(e, nxt, tick=now)

        if brain.bbox_id >= 0:
            self._negotiate_next_meeting(e)
        else:
            self.robots[e].status = STANDBY
            self.log.emit(now, e, "parked", at=self.robots[e].pose)
            self.robots[e].plan = LocalPlan(robot_id=e, issue_tick=now, steps=[])
            self.exec[e].cursor = 0
            self.exec[e].leg = None
            self._sync_plan_record(e)
        self._recompute_gcs_route(brain.gcs_id)

    def _negotiate_next_meeting(self, e: int, first: bool = False) -> None:
        brain = self.exp_brain[e]
        r = self.robots[e]
        g = brain.gcs_id
        gb = self.gcs_brain[g]
        now = self.tick
        local = r.store.local_map
        basis = "initial"
        if self.cfg.mode == MODE_FIX:
            interval = self.cfg.fix_interval or self.cfg.initial_window
            t_c = float((now // interval + 1) * interval)
            p_c = gb.fix_spot[e]
            floor = self._eta(local, r.pose, p_c, r.speed)
            if brain.bbox_id >= 0:
                # A slot the sortie cannot make just pins the explorer to the
                # rendezvous point forever; skip slots until the round trip
                # to the nearest open frontier (or unswept spot) fits.
                travel = TravelCache(local)
                goals = frontiers(local, self.bboxes[brain.bbox_id]) \
                    or self._sweep_targets(e, limit=16, travel=travel)
                if goals:
                    rt = min((travel.ticks(r.pose, f, r.speed)
                              + travel.ticks(p_c, f, r.speed) for f in goals),
                             default=math.inf)
                    if math.isfinite(rt):
                        floor = max(floor, rt)
                if self._fitted_unassigned(e) or self._pending_results(e) \
                        or self._assigned_in_flight(e):
                    detour = 0.0
                    for j in brain.inspectors:
                        if self.robots[j].status == FAILED:
                            continue
                        kp = r.store.plans.get(j)
                        spot = kp.waypoints[-1] if kp is not None and kp.waypoints \
                            else self.robots[j].pose
                        leg = travel.ticks(r.pose, spot, r.speed)
                        if math.isfinite(leg):
                            detour += 2.0 * leg
                    if detour > 0:
                        floor = max(floor, detour + self.cfg.soei_period)
            while math.isfinite(floor) and t_c < now + floor + 1:
                t_c += interval
        else:
            while True:
                bbox = self.bboxes[brain.bbox_id]
                if first:
                    t_c = float(self.cfg.initial_window)
                else:
                    t_c, basis = self._predict_next_meeting(e, gb)
                try:
                    p_c = gcs_ops.select_meeting_corner(
                        bbox, r.pose, t_c, local, r.speed, now=float(now),
                        ground_z=self.cfg.ground_z)
                except ValueError:
                    # Nowhere around this box is reachable: write it off.
                    self._mark_bbox_complete(e, brain.bbox_id, note="unreachable")
                    brain.complete_reported.add(brain.bbox_id)
                    brain.bbox_id = -1
                    nxt = self._next_bbox_for(e, gb)
                    if nxt is None:
                        self.robots[e].status = STANDBY
                        self.log.emit(now, e, "parked", at=r.pose)
                        return
                    self._assign_bbox(e, nxt, tick=now)
                    continue
                break
            eta = self._eta(local, r.pose, p_c, r.speed)
            if math.isfinite(eta):
                t_c = max(t_c, now + math.ceil(eta) + 1.0)
            if not first:
                self.log.emit(now, g, "prediction", explorer=e, bbox=brain.bbox_id,
                              basis=basis, when=t_c)
        if self.cfg.energy_enabled and self.cfg.stations:
            usable = (r.energy - self.cfg.e_min) / self.cfg.alpha
            if usable < (t_c - now):
                travel = TravelCache(local)
                trips = [2.0 * travel.ticks(p_c, s, r.speed)
                         for s in sorted(self.cfg.stations)]
                trips = [x for x in trips if math.isfinite(x)]
                t_c = gcs_ops.retime_for_energy(
                    t_c, float(now), self.cfg.e_max, self.cfg.e_min,
                    self.cfg.alpha, self.cfg.beta, min(trips) if trips else 0.0)
        ev = MeetingEvent(location=p_c, tick=float(t_c), participants=(e, g),
                          status=MEETING_CONFIRMED)
        sm = ScheduledMeeting(event=ev, kind="gcs", bbox_id=brain.bbox_id,
                              created_tick=self.tick)
        brain.meeting = sm
        gb.pending[e] = sm
        self.log.emit(now, g, "meeting_negotiated", explorer=e, location=p_c,
                      when=float(t_c), bbox=brain.bbox_id, basis=basis)
        self._rebuild_explorer_plan(e)

    def _next_bbox_for(self, e: int, gb: _GcsBrain) -> int | None:
        if self.cfg.mode == MODE_PRE:
            q = self.exp_brain[e].pre_queue
            while q:
                bid = q.pop(0)
                if gb.bbox_state.get(bid) == "unassigned":
                    return bid
            return None
        if gb.priority_bbox >= 0 and gb.bbox_state.get(gb.priority_bbox) == "unassigned":
            return gb.priority_bbox
        open_boxes = [self.bboxes[b] for b, st in sorted(gb.bbox_state.items())
                      if st == "unassigned"]
        if not open_boxes:
            return None
        assignment, _ = gcs_ops.rolling_assign(
            open_boxes, {e: self.robots[e].pose}, 0,
            local=self.robots[e].store.local_map)
        return assignment.get(e)

    def _predict_next_meeting(self, e: int, gb: _GcsBrain) -> tuple[float, str]:
        brain = self.exp_brain[e]
        bid = brain.bbox_id
        now = self.tick
        store = self.robots[brain.gcs_id].store
        v_b = float(self.bboxes[bid].volume)
        v_m = float(store.local_map.explored_volume.get(bid, 0))
        start = gb.bbox_start.get(bid, brain.bbox_start)
        t_e = float(now - start)
        if v_m <= 0 or t_e <= 0:
            return float(now + self.cfg.initial_window), "deferred"
        in_box = [fid for fid, b in sorted(self.feature_bbox.items()) if b == bid]
        n_f = sum(1 for fid in in_box
                  if store.features.get(fid) is not None
                  and store.features[fid].status >= FeatureStatus.FITTED)
        n_s = sum(1 for fid in in_box if fid in store.results)
        d = gcs_ops.predict_completion(v_b, v_m, n_f, n_s, t_e)
        t_c = max(float(start + math.ceil(d)), float(now + 1))
        # The rate extrapolation collapses toward "now" as the box fills,
        # which would thrash meetings. The window is floored at one sweep
        # out to the farthest reachable frontier and back (both sides hold
        # the same merged map while they stand together).
        r = self.robots[e]
        travel = TravelCache(r.store.local_map)
        goals = frontiers(r.store.local_map, self.bboxes[bid]) \
            or self._sweep_targets(e, limit=16, travel=travel)
        if goals:
            far = max((travel.ticks(r.pose, f, r.speed) for f in goals
                       if math.isfinite(travel.dist_vox(r.pose, f))),
                      default=0.0)
            floor = now + math.ceil(2.0 * far) + 1.0
        else:
            # Mapped out and looked over; only the inspection tail remains.
            floor = now + self.cfg.soei_period + self.cfg.delta_bar
        # Outstanding subgroup work needs an excursion to the inspectors
        # before coming back; a window shorter than that round trip makes
        # every serving plan infeasible and the hand-off starves.
        if self._fitted_unassigned(e) or self._pending_results(e) \
                or self._assigned_in_flight(e):
            detour = 0.0
            for j in brain.inspectors:
                if self.robots[j].status == FAILED:
                    continue
                kp = r.store.plans.get(j)
                spot = kp.waypoints[-1] if kp is not None and kp.waypoints \
                    else self.robots[j].pose
                leg = travel.ticks(r.pose, spot, r.speed)
                if math.isfinite(leg):
                    detour += 2.0 * leg
            if detour > 0:
                floor = max(floor, now + math.ceil(detour)
                            + self.cfg.soei_period + self.cfg.delta_bar)
        return max(t_c, float(floor)), gcs_ops.prediction_basis(n_s)

    def _recompute_gcs_route(self, g: int) -> None:
        gb = self.gcs_brain[g]
        gcs = self.robots[g]
        if self.cfg.mode == MODE_FIX:
            gb.route_order = sorted(gb.pending,
                                    key=lambda e: (gb.pending[e].event.tick, e))
            for e in gb.route_order:
                gb.park_for[e] = gcs.pose
            return
        pending = [(e, sm.event.location, sm.event.tick)
                   for e, sm in sorted(gb.pending.items()) if sm.fired_tick < 0]
        if not pending:
            gb.route_order = []
            return
        route = gcs_ops.schedule_tsp_tw(
            pending, gcs.pose, gcs.speed, float(self.cfg.delta_bar),
            local=gcs.store.local_map, now=float(self.tick), gcs_id=g,
            ground_z=self.cfg.ground_z)
        gb.route_order = [ev.participants[0] for ev, _ in route.visits]
        for ev, _ in route.visits:
            e = ev.participants[0]
            gb.park_for[e] = self._park_voxel(gcs, ev.location,
                                              gb.park_block.get(e, set()))
        for e in route.dropped:
            # No ordering serves this window; push the visit to the tail and
            # let the waiting explorer catch the late arrival.
            sm = gb.pending[e]
            self.log.emit(self.tick, g, "reschedule", explorer=e,
                          planned=sm.event.tick)
            gb.route_order.append(e)
            gb.park_for[e] = self._park_voxel(gcs, sm.event.location,
                                              gb.park_block.get(e, set()))

    def _park_voxel(self, gcs: RobotState, p_c: Vox, block: set | None = None) -> Vox:
        """Closest ground voxel beside the meeting point, never on it.

        Known-free voxels beat unknown ones so the station does not commit
        to a spot that turns out to be a wall.
        """
        local = gcs.store.local_map
        z = self.cfg.ground_z
        block = block or set()
        best = None
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                q = (p_c[0] + dx, p_c[1] + dy, z)
                if q == p_c or q in block or not local.in_bounds(q):
                    continue
                d = euclid(q, p_c)
                if d > MEET_RADIUS_VOX + _EPS or local.cells[q] == OCCUPIED:
                    continue
                unknown = 1 if local.cells[q] != FREE else 0
                if best is None or (unknown, d, q) < best:
                    best = (unknown, d, q)
        return best[2] if best else p_c

    def _gcs_current_visit(self, g: int) -> ScheduledMeeting | None:
        gb = self.gcs_brain[g]
        for e in gb.route_order:
            sm = gb.pending.get(e)
            if sm is not None and sm.fired_tick < 0:
                return sm
        return None

    def _gcs_follow_route(self, g: int) -> None:
        gcs = self.robots[g]
        if gcs.status != ACTIVE:
            return
        if self.cfg.mode == MODE_FIX:
            return  # stationary by definition
        ex = self.exec[g]
        cur = self._gcs_current_visit(g)
        if cur is None:
            if gcs.plan.steps:
                gcs.plan = LocalPlan(robot_id=g, issue_tick=self.tick, steps=[])
                ex.cursor = 0
                ex.leg = None
            return
        e = cur.event.participants[0]
        gb = self.gcs_brain[g]
        park = gb.park_for.get(e)
        if park is None or (park != cur.event.location
                            and gcs.store.local_map.cells[park] == OCCUPIED):
            # The chosen spot turned out to be a wall once sensed; repick.
            park = self._park_voxel(gcs, cur.event.location,
                                    gb.park_block.get(e, set()))
            gb.park_for[e] = park
        target = gcs.plan.steps[ex.cursor].pos if ex.cursor < len(gcs.plan.steps) else None
        if target != park:
            gcs.plan = LocalPlan(
                robot_id=g, issue_tick=self.tick,
                steps=[PlanStep(pos=park, arrival=float(cur.event.tick),
                                purpose=PURPOSE_MEET)])
            ex.cursor = 0
            ex.leg = None

    # -------------------------------------------------------------- main loop

    def _phase_metrics(self) -> None:
        counts = {s.name.lower(): 0 for s in FeatureStatus}
        for f in self.features.values():
            counts[f.status.name.lower()] += 1
        by_status = {ACTIVE: 0, CHARGING: 0, FAILED: 0, STANDBY: 0}
        for r in self.robots.values():
            by_status[r.status] += 1
        row = {"tick": self.tick}
        row.update(counts)
        row.update({f"robots_{k}": v for k, v in by_status.items()})
        self.metrics.tick_rows.append(row)

    def _mission_done(self) -> bool:
        gb = self.gcs_brain[self.gcs_ids[0]]
        if any(st != "complete" for st in gb.bbox_state.values()):
            return False
        store = self.robots[self.gcs_ids[0]].store
        return all(fid in store.results for fid in self.features)

    def step(self) -> None:
        self._phase_move()
        self._phase_sense()
        self._phase_meetings()
        self._phase_mismatch()
        self._phase_energy()
        self._phase_failures()
        self._phase_planning()
        self._phase_metrics()
        self.tick += 1

    def run(self) -> tuple[Metrics, EventLog]:
        m = self.metrics
        while self.tick < self.budget:
            self.step()
            if self._mission_done():
                m.completed = True
                m.finish_tick = self.tick
                break
            if self.incomplete_reason:
                break
        if not m.completed and not self.incomplete_reason:
            self.incomplete_reason = "tick budget exhausted"
        m.incomplete_reason = self.incomplete_reason
        if m.finish_tick < 0:
            m.finish_tick = self.tick
        store = self.robots[self.gcs_ids[0]].store
        total = len(self.features)
        got = sum(1 for fid in self.features if fid in store.results)
        m.finish_rate = 100.0 if total == 0 else 100.0 * got / total
        m.total_idle = sum(v["travel"] + v["wait"] for v in m.idle_by_robot.values())
        m.meetings_per_bbox = m.gcs_explorer_meetings / max(1, len(self.bboxes))
        seen_any = int(np.count_nonzero(self._seen_count >= 1))
        seen_multi = int(np.count_nonzero(self._seen_count >= 2))
        m.overlap_rate = 100.0 * seen_multi / seen_any if seen_any else 0.0
        self.log.emit(self.tick, "sim", "finished", completed=m.completed,
                      finish_rate=m.finish_rate, finish_tick=m.finish_tick,
                      reason=m.incomplete_reason)
        return m, self.log


# ----------------------------------------------------------- module-level ops

def step(sim: Simulation) -> Simulation:
    """Advance the simulation one tick in place and return it."""
    sim.step()
    return sim


def mismatch(meeting: MeetingEvent, now: float, arrivals: dict[int, float], *,
             delta_bar: float, waiter_role: str, prior_misses: int = 0,
             max_wait: float | None = None) -> str:
    """Decide what the party waiting at an overdue meeting does.

    waiter_role names who is standing at the meeting point: "gcs" waiting for
    its explorer, "explorer_gcs" waiting for the ground station, or
    "explorer_inspector" waiting for an inspector. Actions: "fire" (both
    present), "wait", "declare_failed" (write the explorer off), "abandon"
    (give up on the station), "retry" (second meeting attempt),
    "inspector_failed" (write the inspector off).
    """
    a, b = meeting.participants
    if a in arrivals and b in arrivals:
        return "fire"
    overdue = now - meeting.tick
    if waiter_role == "gcs":
        return "declare_failed" if overdue > delta_bar else "wait"
    if waiter_role == "explorer_gcs":
        if max_wait is not None and overdue > max_wait:
            return "abandon"
        return "wait"
    if waiter_role == "explorer_inspector":
        if overdue <= delta_bar:
            return "wait"
        return "inspector_failed" if prior_misses + 1 >= 2 else "retry"
    raise ValueError(f"unknown waiter role {waiter_role!r}")


def recover_explorer_failure(failed_id: int, sim: Simulation) -> Simulation:
    """Reassignment bookkeeping after an explorer is written off.

    The lost box returns to the pool flagged first-priority, so the next
    subgroup reporting its own box complete inherits it together with the
    orphaned inspectors. When no future completion report can happen, the
    orphans and the box are merged into the nearest surviving subgroup
    immediately.
    """
    brain = sim.exp_brain.get(failed_id)
    if brain is None:
        return sim
    g = brain.gcs_id if brain.gcs_id >= 0 else sim.gcs_ids[0]
    gb = sim.gcs_brain[g]
    gb.pending.pop(failed_id, None)
    brain.meeting = None
    bid = brain.bbox_id
    if bid >= 0 and gb.bbox_state.get(bid) != "complete":
        for gg in sim.gcs_ids:
            gbb = sim.gcs_brain[gg]
            gbb.bbox_state[bid] = "unassigned"
            gbb.bbox_owner.pop(bid, None)
            gbb.bbox_seq[bid] += 1
            gbb.priority_bbox = bid
            sim.robots[gg].store.record_bbox(BBoxStatusRecord(
                bbox_id=bid, seq=gbb.bbox_seq[bid], status="unassigned"))
            sim._bump(gg)
        sim.bboxes[bid].status = "unassigned"
    for j in brain.inspectors:
        if sim.robots[j].status != FAILED and j not in gb.orphans:
            gb.orphans.append(j)
    gb.orphans.sort()
    brain.inspectors = []
    brain.soei_queue = []
    brain.pending_handoff = {}
    brain.bbox_id = -1
    sim.log.emit(sim.tick, g, "explorer_recovery", explorer=failed_id, bbox=bid,
                 orphans=gb.orphans)

    survivors = [e for e in sim.explorer_ids
                 if e != failed_id and sim.robots[e].status != FAILED]
    busy = [b for b, st in gb.bbox_state.items()
            if st == "assigned" and gb.bbox_owner.get(b) is not None]
    if survivors and not busy:
        # Nobody will come report a completion, so fold everything in now.
        host = min(survivors, key=lambda e: (
            euclid(sim.robots[e].pose, sim.robots[failed_id].pose), e))
        for j in list(gb.orphans):
            sim._adopt_inspector(host, j)
        gb.orphans = []
        if gb.priority_bbox >= 0 and sim.exp_brain[host].bbox_id < 0:
            pb = gb.priority_bbox
            gb.priority_bbox = -1
            sim.robots[host].status = ACTIVE
            sim.exp_brain[host].gcs_id = g
            sim._assign_bbox(host, pb, tick=sim.tick)
            sim._negotiate_next_meeting(host)
    sim._recompute_gcs_route(g)
    return sim


def run(config: SimConfig) -> tuple[Metrics, EventLog]:
    """Run one full mission and return its metrics and event log."""
    return Simulation(config).run()
