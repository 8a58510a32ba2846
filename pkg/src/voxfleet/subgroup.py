"""Explorer-side planning of inspector rendezvous and feature hand-off.

An explorer that has just fitted new features decides, in one joint
optimization: which of its inspectors to meet, at which sampled point along
each inspector's executing route, in what order, and how to split the new
features among them. The objective is total predicted idle time — travel
to the meetings plus everyone's waiting — and the empty choice (keep
exploring, meet nobody) always competes.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field

from voxfleet import _kernels
from voxfleet.comm import LinkSpec
from voxfleet.explore import PURPOSE_INSPECT, LocalPlan, PlanStep
from voxfleet.world import FREE, Feature, LocalMap, Priority, Vox, euclid, raycast_los

_EPS = 1e-9

# Candidate spaces up to this many (sample choices x orderings) are solved
# exhaustively; larger ones fall back to the genetic search.
EXACT_SEARCH_LIMIT = 5000

# Routing problems with at most this many feature visits are solved exactly.
EXACT_ROUTING_LIMIT = 9

GA_POPULATION = 50
GA_GENERATIONS = 100
GA_MUTATION_RATE = 0.1
GA_ELITES = 2

MEETING_PLANNED = "planned"
MEETING_CONFIRMED = "confirmed"
MEETING_MET = "met"
MEETING_MISSED = "missed"


@dataclass
class MeetingEvent:
    """A scheduled rendezvous between the explorer and one peer."""

    location: Vox
    tick: float
    participants: tuple[int, int]  # (explorer id, peer id)
    status: str = MEETING_PLANNED

    def confirm(self) -> None:
        if self.status == MEETING_PLANNED:
            self.status = MEETING_CONFIRMED


@dataclass
class IdleBudget:
    travel: float = 0.0
    wait: float = 0.0

    def __post_init__(self) -> None:
        if self.travel < -_EPS or self.wait < -_EPS:
            raise ValueError("idle components cannot be negative")

    def total(self) -> float:
        return self.travel + self.wait


@dataclass
class SubgroupPlan:
    """The winning joint choice for one explorer's subgroup."""

    explorer_id: int
    chosen: tuple[int, ...]
    meetings: list[MeetingEvent]
    allocation: dict[int, list[int]]  # inspector id -> feature ids, visit order
    updated_plans: dict[int, LocalPlan]
    idle: float  # predicted total idle, wait + added travel
    wait_idle: float = 0.0
    travel_idle: float = 0.0
    unserved: int = 0


@dataclass(frozen=True)
class SampleCandidate:
    """A meeting point sampled near one waypoint of an inspector's route."""

    pos: Vox
    pass_tick: float  # when the inspector reaches the anchoring waypoint
    window_end: float  # when it leaves that waypoint's vicinity (inf at route end)
    anchor: Vox


class TravelCache:
    """Shortest-path travel queries on one map, memoized per source point.

    Unknown space counts as passable, matching how robots plan into
    territory they have not seen yet.
    """

    def __init__(self, local: LocalMap, z_lock: int = -1):
        self.local = local
        self.z_lock = z_lock
        self._fields: dict[Vox, object] = {}

    def _field(self, src: Vox):
        f = self._fields.get(src)
        if f is None:
            f = _kernels.dijkstra_field(self.local.cells, src[0], src[1], src[2], self.z_lock)
            self._fields[src] = f
        return f

    def dist_vox(self, a: Vox, b: Vox) -> float:
        if a == b:
            return 0.0
        if a in self._fields:
            return float(self._fields[a][b])
        if b in self._fields:
            return float(self._fields[b][a])
        return float(self._field(a)[b])

    def ticks(self, a: Vox, b: Vox, speed: float) -> float:
        return self.dist_vox(a, b) * self.local.resolution / speed


def _plan_waypoints(plan: LocalPlan) -> list[tuple[Vox, float, float]]:
    """(pos, pass tick, window end) per waypoint of an executing plan."""
    out = []
    for k, st in enumerate(plan.steps):
        nxt = plan.steps[k + 1].arrival if k + 1 < len(plan.steps) else math.inf
        out.append((st.pos, st.arrival, nxt))
    return out


def sample_los(
    local: LocalMap,
    inspector_plans: list[LocalPlan],
    link: LinkSpec,
    n_samples: int = 5,
    *,
    pose: Vox,
    now: float = 0.0,
) -> dict[int, list[SampleCandidate]]:
    """Candidate meeting points around each inspector's executing route.

    Candidates must be known-Free, within link range of some route waypoint
    and with unobstructed sight of it on the explorer's own map (unknown
    treated as blocking, so a meeting is never bet on unseen space). Spots
    whose pass-by window already closed are useless and dropped up front;
    where windows overlap the voxel keeps the most forgiving one. The
    nearest n_samples to the explorer survive per inspector.
    """
    r_vox = link.range_m / local.resolution
    r_box = int(math.floor(r_vox))
    out: dict[int, list[SampleCandidate]] = {}
    for plan in inspector_plans:
        cands: dict[Vox, SampleCandidate] = {}
        for wp, pass_tick, window_end in _plan_waypoints(plan):
            if window_end <= now + _EPS:
                continue
            x0, x1 = max(0, wp[0] - r_box), min(local.dims[0] - 1, wp[0] + r_box)
            y0, y1 = max(0, wp[1] - r_box), min(local.dims[1] - 1, wp[1] + r_box)
            z0, z1 = max(0, wp[2] - r_box), min(local.dims[2] - 1, wp[2] + r_box)
            for x in range(x0, x1 + 1):
                for y in range(y0, y1 + 1):
                    for z in range(z0, z1 + 1):
                        p = (x, y, z)
                        if p == wp or local.cells[x, y, z] != FREE:
                            continue
                        if euclid(p, wp) > r_vox + _EPS:
                            continue
                        prev = cands.get(p)
                        if prev is None or window_end > prev.window_end \
                                or (window_end == prev.window_end
                                    and pass_tick < prev.pass_tick):
                            cands[p] = SampleCandidate(p, pass_tick, window_end, wp)
        picked: list[SampleCandidate] = []
        # Sight checks are the expensive part, so run them lazily in
        # nearest-first order and stop at the cap.
        for cand in sorted(cands.values(), key=lambda c: (euclid(pose, c.pos), c.pos)):
            if raycast_los(local, cand.pos, cand.anchor, require_free=True):
                picked.append(cand)
                if len(picked) >= n_samples:
                    break
        out[plan.robot_id] = picked
    return out


def opt_meet(
    sequence: list[tuple[int, SampleCandidate]],
    plans: dict[int, LocalPlan],
    *,
    explorer_id: int,
    pose: Vox,
    speed: float,
    now: float,
    travel: TravelCache,
) -> tuple[list[MeetingEvent], float] | None:
    """Time a meeting sequence and price its idle.

    The explorer runs the sample points in the given order; each meeting
    fires as soon as both sides can attend. Total idle charged is the
    explorer's travel, the explorer's waiting at each point, and any time
    an inspector is held past the end of its executing route. Returns None
    when some meeting cannot catch its inspector's pass-by window.
    """
    if not sequence:
        return [], 0.0
    meetings: list[MeetingEvent] = []
    at, t = pose, now
    tau_travel = 0.0
    tau_wait = 0.0
    for insp_id, cand in sequence:
        dt = travel.ticks(at, cand.pos, speed)
        if not math.isfinite(dt):
            return None
        arrival = t + dt
        fire = max(arrival, cand.pass_tick)
        if fire >= cand.window_end - _EPS:
            return None
        tau_travel += dt
        tau_wait += fire - arrival
        plan_end = plans[insp_id].end_tick(fallback=now)
        tau_wait += max(0.0, fire - plan_end)
        meetings.append(MeetingEvent(location=cand.pos, tick=fire,
                                     participants=(explorer_id, insp_id)))
        at, t = cand.pos, fire
    return meetings, tau_travel + tau_wait


def _route_cost_table(
    feats: list[Feature],
    depot: Vox,
    speed: float,
    travel: TravelCache,
) -> tuple[list[float], list[list[int]]]:
    """Exact cheapest route over every feature subset, highs before normals.

    Returns (cost per bitmask, visit order per bitmask). Subset-DP over
    (mask, last); a high-priority feature may only extend a mask that holds
    no normal one yet, which forces the precedence in every completion.
    """
    n = len(feats)
    pos = [f.position for f in feats]
    high = [f.priority == Priority.HIGH for f in feats]
    d0 = [travel.ticks(depot, p, speed) for p in pos]
    dd = [[travel.ticks(pos[i], pos[j], speed) for j in range(n)] for i in range(n)]

    INF = math.inf
    size = 1 << n
    dp = [[INF] * n for _ in range(size)]
    parent: list[list[int]] = [[-1] * n for _ in range(size)]
    for i in range(n):
        dp[1 << i][i] = d0[i]
    for mask in range(size):
        has_normal = any(not high[i] and (mask >> i) & 1 for i in range(n))
        for last in range(n):
            c = dp[mask][last]
            if not math.isfinite(c):
                continue
            for j in range(n):
                if (mask >> j) & 1:
                    continue
                if high[j] and has_normal:
                    continue
                nm = mask | (1 << j)
                nc = c + dd[last][j]
                if nc < dp[nm][j] - _EPS:
                    dp[nm][j] = nc
                    parent[nm][j] = last

    cost = [0.0] * size
    orders: list[list[int]] = [[] for _ in range(size)]
    for mask in range(1, size):
        best, best_last = INF, -1
        for last in range(n):
            if (mask >> last) & 1 and dp[mask][last] < best - _EPS:
                best, best_last = dp[mask][last], last
        cost[mask] = best
        seq: list[int] = []
        m, last = mask, best_last
        while last != -1:
            seq.append(last)
            prev = parent[m][last]
            m ^= 1 << last
            last = prev
        orders[mask] = list(reversed(seq))
    return cost, orders


def _violates_precedence(order: list[int], high: list[bool]) -> bool:
    seen_normal = False
    for i in order:
        if high[i] and seen_normal:
            return True
        if not high[i]:
            seen_normal = True
    return False


def _heuristic_routes(
    feats: list[Feature],
    depots: list[Vox],
    speeds: list[float],
    travel: TravelCache,
) -> list[list[int]]:
    """Cheapest-append construction plus local improvement for big batches."""
    n, k = len(feats), len(depots)
    pos = [f.position for f in feats]
    high = [f.priority == Priority.HIGH for f in feats]

    def leg(a: Vox, b: Vox, v: int) -> float:
        return travel.ticks(a, b, speeds[v])

    routes: list[list[int]] = [[] for _ in range(k)]
    ends = list(depots)
    order = sorted(range(n), key=lambda i: (not high[i], feats[i].id))
    for i in order:
        costs = [(leg(ends[v], pos[i], v), v) for v in range(k)]
        costs = [(c, v) for c, v in costs if math.isfinite(c)]
        if not costs:
            costs = [(0.0, 0)]
        _, v = min(costs)
        routes[v].append(i)
        ends[v] = pos[i]

    def route_cost(v: int, seq: list[int]) -> float:
        t, at = 0.0, depots[v]
        for i in seq:
            t += leg(at, pos[i], v)
            at = pos[i]
        return t

    improved = True
    passes = 0
    while improved and passes < 20:
        improved = False
        passes += 1
        for v in range(k):  # 2-opt inside each route
            seq = routes[v]
            base = route_cost(v, seq)
            for a in range(len(seq) - 1):
                for b in range(a + 1, len(seq)):
                    cand = seq[:a] + seq[a:b + 1][::-1] + seq[b + 1:]
                    if _violates_precedence(cand, high):
                        continue
                    c = route_cost(v, cand)
                    if c < base - _EPS:
                        routes[v] = cand
                        seq, base = cand, c
                        improved = True
        for v in range(k):  # relocate one visit to another route
            for idx, i in enumerate(list(routes[v])):
                base = route_cost(v, routes[v])
                for w in range(k):
                    if w == v:
                        continue
                    for at_pos in range(len(routes[w]) + 1):
                        cand_w = routes[w][:at_pos] + [i] + routes[w][at_pos:]
                        if _violates_precedence(cand_w, high):
                            continue
                        cand_v = routes[v][:idx] + routes[v][idx + 1:]
                        delta = (route_cost(v, cand_v) + route_cost(w, cand_w)
                                 - base - route_cost(w, routes[w]))
                        if delta < -_EPS:
                            routes[v], routes[w] = cand_v, cand_w
                            improved = True
                            break
                    if improved:
                        break
    return routes


def allocate_features(
    meetings: list[MeetingEvent],
    new_features: list[Feature],
    plans: dict[int, LocalPlan],
    *,
    speeds: dict[int, float],
    travel: TravelCache,
    now: float = 0.0,
) -> tuple[dict[int, list[int]], dict[int, LocalPlan], float]:
    """Split the new features among the met inspectors, route each share.

    Every route starts where its inspector's current plan ends. Small
    batches get the provably cheapest split and orders; larger ones a
    construct-and-improve heuristic. The returned cost is added travel
    only — inspection time is fixed workload, not idle.
    """
    chosen = sorted({m.participants[1] for m in meetings})
    if not new_features or not chosen:
        return {}, {j: plans[j] for j in chosen}, 0.0
    meet_tick = {m.participants[1]: m.tick for m in meetings}
    feats = sorted(new_features, key=lambda f: f.id)
    depots = [plans[j].end_pose() for j in chosen]
    vels = [speeds[j] for j in chosen]

    n, k = len(feats), len(chosen)
    if n <= EXACT_ROUTING_LIMIT:
        tables = [_route_cost_table(feats, depots[v], vels[v], travel) for v in range(k)]
        full = (1 << n) - 1
        INF = math.inf
        # Cheapest way to cover each mask using the first i inspectors.
        cover = [[INF] * (full + 1) for _ in range(k + 1)]
        pick: list[list[int]] = [[0] * (full + 1) for _ in range(k + 1)]
        cover[0][0] = 0.0
        for i in range(1, k + 1):
            cost_i = tables[i - 1][0]
            for mask in range(full + 1):
                sub = mask
                while True:
                    prev = cover[i - 1][mask ^ sub]
                    if math.isfinite(prev) and math.isfinite(cost_i[sub]):
                        c = prev + cost_i[sub]
                        if c < cover[i][mask] - _EPS:
                            cover[i][mask] = c
                            pick[i][mask] = sub
                    if sub == 0:
                        break
                    sub = (sub - 1) & mask
        if not math.isfinite(cover[k][full]):
            routes = _heuristic_routes(feats, depots, vels, travel)
        else:
            routes = []
            mask = full
            for i in range(k, 0, -1):
                sub = pick[i][mask]
                routes.append(tables[i - 1][1][sub] if sub else [])
                mask ^= sub
            routes.reverse()
    else:
        routes = _heuristic_routes(feats, depots, vels, travel)

    allocation: dict[int, list[int]] = {}
    updated: dict[int, LocalPlan] = {}
    tau_travel = 0.0
    for v, j in enumerate(chosen):
        route = routes[v]
        base = plans[j]
        if not route:
            updated[j] = base
            continue
        allocation[j] = [feats[i].id for i in route]
        steps = list(base.steps)
        at = depots[v]
        t = max(base.end_tick(fallback=now), meet_tick.get(j, now))
        for i in route:
            dt = travel.ticks(at, feats[i].position, vels[v])
            tau_travel += dt
            t += dt
            steps.append(PlanStep(pos=feats[i].position, arrival=t,
                                  purpose=PURPOSE_INSPECT,
                                  dwell=float(feats[i].inspect_duration)))
            t += feats[i].inspect_duration
            at = feats[i].position
        updated[j] = LocalPlan(robot_id=j, issue_tick=int(now), steps=steps)
    return allocation, updated, tau_travel


def _order_crossover(a: list[int], b: list[int], rng: random.Random) -> list[int]:
    n = len(a)
    if n < 2:
        return list(a)
    i, j = sorted(rng.sample(range(n), 2))
    child: list[int | None] = [None] * n
    child[i:j + 1] = a[i:j + 1]
    held = set(a[i:j + 1])
    fill = [x for x in b if x not in held]
    it = iter(fill)
    for k in range(n):
        if child[k] is None:
            child[k] = next(it)
    return child  # type: ignore[return-value]


def _ga_search(
    subset: tuple[int, ...],
    samples: dict[int, list[SampleCandidate]],
    evaluate,
    rng: random.Random,
) -> tuple[list[MeetingEvent], float, tuple] | None:
    """Genetic search over (visit order, sample choice per inspector)."""
    ids = list(subset)

    def random_genome():
        perm = list(ids)
        rng.shuffle(perm)
        picks = tuple(rng.randrange(len(samples[j])) for j in ids)
        return tuple(perm), picks

    def fitness(res) -> float:
        return 0.0 if res is None else 1.0 / (1.0 + res[1])

    pop = [random_genome() for _ in range(GA_POPULATION)]
    scored = [(g, evaluate(g)) for g in pop]
    for _ in range(GA_GENERATIONS):
        scored.sort(key=lambda gr: -fitness(gr[1]))
        next_pop = [g for g, _ in scored[:GA_ELITES]]
        while len(next_pop) < GA_POPULATION:
            pa = max(rng.sample(scored, 3), key=lambda gr: fitness(gr[1]))[0]
            pb = max(rng.sample(scored, 3), key=lambda gr: fitness(gr[1]))[0]
            perm = _order_crossover(list(pa[0]), list(pb[0]), rng)
            picks = tuple(pa[1][k] if rng.random() < 0.5 else pb[1][k]
                          for k in range(len(ids)))
            if len(perm) >= 2 and rng.random() < GA_MUTATION_RATE:
                i, j = rng.sample(range(len(perm)), 2)
                perm[i], perm[j] = perm[j], perm[i]
            if rng.random() < GA_MUTATION_RATE:
                k = rng.randrange(len(ids))
                picks = picks[:k] + (rng.randrange(len(samples[ids[k]])),) + picks[k + 1:]
            next_pop.append((tuple(perm), picks))
        scored = [(g, evaluate(g)) for g in next_pop]
    feasible = [(g, r) for g, r in scored if r is not None]
    if not feasible:
        return None
    g, (meetings, tau) = min(feasible, key=lambda gr: (gr[1][1], gr[0]))
    return meetings, tau, g


def soei(
    new_features: list[Feature],
    inspector_ids: list[int],
    plans: dict[int, LocalPlan],
    *,
    explorer_id: int,
    pose: Vox,
    speed: float,
    local: LocalMap,
    now: float,
    link: LinkSpec,
    speeds: dict[int, float],
    n_samples: int = 5,
    pending_results: dict[int, int] | None = None,
    gcs_meeting: tuple[Vox, float] | None = None,
    rng: random.Random | None = None,
) -> SubgroupPlan:
    """Pick the best joint meeting-and-allocation plan for one subgroup.

    Ranks candidates first by how many pending items they leave unserved
    (features not handed off, results not collected), then by predicted
    idle. Meeting nobody is always on the table, so the worst case is a
    plan that just keeps exploring.
    """
    pending = pending_results or {}
    travel = TravelCache(local)
    samples = sample_los(local, [plans[j] for j in sorted(inspector_ids)],
                         link, n_samples, pose=pose, now=now)

    def seq_feasible_for_gcs(meetings: list[MeetingEvent]) -> bool:
        if gcs_meeting is None or not meetings:
            return True
        p_c, t_c = gcs_meeting
        last = meetings[-1]
        return last.tick + travel.ticks(last.location, p_c, speed) <= t_c + _EPS

    def evaluate(order: tuple[int, ...], picks: tuple[int, ...]):
        seq = [(j, samples[j][picks[k]]) for k, j in enumerate(order)]
        res = opt_meet(seq, plans, explorer_id=explorer_id, pose=pose,
                       speed=speed, now=now, travel=travel)
        if res is None or not seq_feasible_for_gcs(res[0]):
            return None
        return res

    best: SubgroupPlan | None = None
    ids = sorted(inspector_ids)
    for size in range(len(ids) + 1):
        for subset in itertools.combinations(ids, size):
            unserved = (len(new_features) if not subset else 0)
            unserved += sum(pending.get(j, 0) for j in ids if j not in subset)
            if best is not None and unserved > best.unserved:
                continue
            if any(not samples[j] for j in subset):
                continue

            if not subset:
                found: tuple[list[MeetingEvent], float] | None = ([], 0.0)
            else:
                space = math.factorial(len(subset))
                for j in subset:
                    space *= len(samples[j])
                found = None
                if space <= EXACT_SEARCH_LIMIT:
                    for order in itertools.permutations(subset):
                        for picks in itertools.product(*[range(len(samples[j])) for j in order]):
                            res = evaluate(order, picks)
                            if res is not None and (found is None or res[1] < found[1] - _EPS):
                                found = res
                else:
                    ga_rng = rng or random.Random(0)
                    hit = _ga_search(subset, samples,
                                     lambda g: evaluate(g[0], g[1]), ga_rng)
                    if hit is not None:
                        found = (hit[0], hit[1])
            if found is None:
                continue
            meetings, tau_plus = found
            allocation, updated, tau_minus = allocate_features(
                meetings, new_features, plans, speeds=speeds, travel=travel, now=now)
            tau = tau_plus + tau_minus
            if best is None or (unserved, tau) < (best.unserved, best.idle - _EPS):
                best = SubgroupPlan(
                    explorer_id=explorer_id,
                    chosen=tuple(subset),
                    meetings=meetings,
                    allocation=allocation,
                    updated_plans=updated,
                    idle=tau,
                    wait_idle=tau_plus,
                    travel_idle=tau_minus,
                    unserved=unserved,
                )
    assert best is not None  # empty subset is always feasible
    return best
