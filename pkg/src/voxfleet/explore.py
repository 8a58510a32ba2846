"""Deadline-aware frontier tour planning for explorer robots.

The planner picks which frontiers to chase between two scheduled meetings.
It maximises the number of frontier visits that still let the robot reach
the next meeting point on time, breaking ties by earlier meeting arrival
and then by lexicographic visit order so replans are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from voxfleet import _kernels
from voxfleet.comm import PlanRecord
from voxfleet.world import LocalMap, Vox, euclid

# At most this many frontier candidates enter the tour search; beyond that
# the set is thinned by farthest-point sampling to keep planning bounded.
FRONTIER_CAP = 8

_EPS = 1e-9

# Purpose tags used in plan steps. The idle accounting in the engine keys
# off these, so they are part of the plan format.
PURPOSE_EXPLORE = "explore"
PURPOSE_MEET = "meet"
PURPOSE_INSPECT = "inspect"
PURPOSE_TRAVEL = "travel"
PURPOSE_CHARGE = "charge"
PURPOSE_WAIT = "wait"


@dataclass(frozen=True)
class PlanStep:
    pos: Vox
    arrival: float
    purpose: str
    dwell: float = 0.0

    def departure(self) -> float:
        return self.arrival + self.dwell


@dataclass
class LocalPlan:
    """A robot's committed route: sparse timed waypoints, not every voxel."""

    robot_id: int
    issue_tick: int
    steps: list[PlanStep] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.steps

    def end_pose(self, fallback: Vox | None = None) -> Vox | None:
        return self.steps[-1].pos if self.steps else fallback

    def end_tick(self, fallback: float = 0.0) -> float:
        return self.steps[-1].departure() if self.steps else fallback

    def meet_step(self) -> PlanStep | None:
        for st in reversed(self.steps):
            if st.purpose == PURPOSE_MEET:
                return st
        return None

    def to_record(self) -> PlanRecord:
        return PlanRecord(
            robot_id=self.robot_id,
            issue_tick=self.issue_tick,
            waypoints=tuple(st.pos for st in self.steps),
            arrivals=tuple(st.arrival for st in self.steps),
            purposes=tuple(st.purpose for st in self.steps),
            dwells=tuple(st.dwell for st in self.steps),
        )


def select_frontier_subset(frontiers: list[Vox], pose: Vox, cap: int = FRONTIER_CAP) -> list[Vox]:
    """Thin a frontier set to `cap` spread-out candidates.

    Greedy farthest-point sampling in Euclidean space, seeded with the
    frontier nearest the robot so close-by work is never sampled away.
    """
    pts = sorted(set(frontiers))
    if len(pts) <= cap:
        return pts
    seed = min(pts, key=lambda p: (euclid(pose, p), p))
    chosen = [seed]
    remaining = [p for p in pts if p != seed]
    while len(chosen) < cap and remaining:
        best = max(remaining, key=lambda p: (min(euclid(p, c) for c in chosen), [-v for v in p]))
        chosen.append(best)
        remaining.remove(best)
    return sorted(chosen)


def _travel_fields(local: LocalMap, points: list[Vox], z_lock: int = -1):
    """One shortest-path field per point, in voxel units, unknown-optimistic."""
    return {p: _kernels.dijkstra_field(local.cells, p[0], p[1], p[2], z_lock) for p in points}


def ff3e(
    pose: Vox,
    frontiers: list[Vox],
    meeting: tuple[Vox, float],
    speed: float,
    local: LocalMap,
    now: float = 0.0,
    issue_tick: int = 0,
    robot_id: int = -1,
) -> LocalPlan:
    """Plan a frontier tour that ends at the meeting point before its tick.

    Returns a plan whose last step is the meeting waypoint. When even the
    direct run to the meeting cannot make the deadline the plan comes back
    empty and the caller routes best-effort instead.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    meet_pos, meet_tick = meeting
    scale = local.resolution / speed  # voxel distance -> ticks

    cands = select_frontier_subset(list(frontiers), pose)
    fields = _travel_fields(local, cands + [meet_pos])
    meet_field = fields[meet_pos]

    def t_to_meet(p: Vox) -> float:
        return float(meet_field[p]) * scale

    direct = t_to_meet(pose)
    if not math.isfinite(direct) or now + direct > meet_tick + _EPS:
        return LocalPlan(robot_id=robot_id, issue_tick=issue_tick)

    # Drop frontiers we cannot reach at all.
    cands = [p for p in cands if math.isfinite(float(fields[p][pose]))]

    def leg(a: Vox, b: Vox) -> float:
        # Fields are symmetric, so one field per candidate covers all pairs.
        return float(fields[b][a]) * scale if b in fields else float(fields[a][b]) * scale

    best_seq: list[Vox] = []
    best_arrival = now + direct
    seen: dict[tuple[frozenset, Vox], float] = {}

    def extend(seq: list[Vox], at: Vox, t: float) -> None:
        nonlocal best_seq, best_arrival
        arrival = t + t_to_meet(at)
        if len(seq) > len(best_seq) or (len(seq) == len(best_seq) and arrival < best_arrival - _EPS):
            best_seq = list(seq)
            best_arrival = arrival
        todo = [p for p in cands if p not in seq]
        if len(seq) + len(todo) < len(best_seq):
            return
        for p in todo:  # cands are sorted, so first-found ties are lexicographic
            t_p = t + leg(at, p)
            if t_p + t_to_meet(p) > meet_tick + _EPS:
                continue
            key = (frozenset(seq) | {p}, p)
            prev = seen.get(key)
            if prev is not None and prev <= t_p + _EPS:
                continue
            seen[key] = t_p
            seq.append(p)
            extend(seq, p, t_p)
            seq.pop()

    extend([], pose, now)

    steps: list[PlanStep] = []
    t = now
    at = pose
    for p in best_seq:
        t += leg(at, p)
        steps.append(PlanStep(pos=p, arrival=t, purpose=PURPOSE_EXPLORE))
        at = p
    steps.append(PlanStep(pos=meet_pos, arrival=t + t_to_meet(at), purpose=PURPOSE_MEET))
    return LocalPlan(robot_id=robot_id, issue_tick=issue_tick, steps=steps)


def adapt_plan(
    current: LocalPlan,
    new_frontiers: list[Vox],
    meeting: tuple[Vox, float],
    local: LocalMap,
    *,
    pose: Vox,
    now: float,
    speed: float,
) -> LocalPlan:
    """Replan mid-leg after the map changed under the current plan.

    The fresh frontier set is authoritative: pending targets that stopped
    being frontiers (observed in passing) drop out, new ones join. The
    meeting commitment is kept as-is.
    """
    pool = sorted(set(new_frontiers))
    return ff3e(pose, pool, meeting, speed, local,
                now=now, issue_tick=int(now), robot_id=current.robot_id)
