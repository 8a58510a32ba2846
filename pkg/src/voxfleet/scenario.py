"""Scenario files: load, validate, save, and procedurally generate missions.

A scenario is one JSON document holding everything a run needs: the voxel
world, search boxes, features, the fleet, protocol knobs, energy model, and
the failure schedule. Errors from the loader name the offending key path
(for example ``robots[2].speed``) so a hand-edited file is quick to fix.
"""

from __future__ import annotations

import json
import math

import numpy as np

from voxfleet import rng as rng_mod
from voxfleet.sim import (
    MODE_FIX,
    MODE_PRE,
    MODE_SLEI3D,
    ROLE_EXPLORER,
    ROLE_GCS,
    ROLE_INSPECTOR,
    RobotSpec,
    SimConfig,
)
from voxfleet.world import (
    FREE,
    OCCUPIED,
    BBox,
    Feature,
    Priority,
    Vox,
    WorldGrid,
    astar_path,
)

_ROLES = (ROLE_GCS, ROLE_EXPLORER, ROLE_INSPECTOR)
_MODES = (MODE_SLEI3D, MODE_FIX, MODE_PRE)


class ScenarioError(ValueError):
    """A scenario document failed validation; the message names the key path."""


def _fail(path: str, msg: str) -> None:
    raise ScenarioError(f"{path}: {msg}")


def _req(obj: dict, key: str, path: str):
    if key not in obj:
        _fail(path, f"missing required key '{key}'")
    return obj[key]


def _as_int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    return v


def _as_num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {v!r}")
    return float(v)


def _as_vox(v, path: str) -> Vox:
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or any(isinstance(c, bool) or not isinstance(c, int) for c in v)):
        _fail(path, f"expected [x, y, z] integers, got {v!r}")
    return (v[0], v[1], v[2])


def load_scenario(doc: dict | str) -> SimConfig:
    """Build a validated SimConfig from a scenario dict or JSON text."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        _fail("$", "top level must be an object")

    w = _req(doc, "world", "$")
    if not isinstance(w, dict):
        _fail("world", "must be an object")
    dims = _as_vox(_req(w, "dims", "world"), "world.dims")
    if min(dims) < 3:
        _fail("world.dims", "every axis needs at least 3 voxels")
    resolution = _as_num(w.get("resolution", 1.0), "world.resolution")
    if resolution <= 0:
        _fail("world.resolution", "must be positive")
    cells = np.full(dims, FREE, dtype=np.uint8)
    if w.get("shell", True):
        cells[0, :, :] = OCCUPIED
        cells[-1, :, :] = OCCUPIED
        cells[:, 0, :] = OCCUPIED
        cells[:, -1, :] = OCCUPIED
        cells[:, :, 0] = OCCUPIED
        cells[:, :, -1] = OCCUPIED
    runs = w.get("occupied", [])
    if not isinstance(runs, list):
        _fail("world.occupied", "must be a list of [x0,y0,z0,x1,y1,z1] boxes")
    for k, run in enumerate(runs):
        path = f"world.occupied[{k}]"
        if not isinstance(run, (list, tuple)) or len(run) != 6:
            _fail(path, f"expected [x0,y0,z0,x1,y1,z1], got {run!r}")
        lo = _as_vox(run[:3], path)
        hi = _as_vox(run[3:], path)
        if any(a > b for a, b in zip(lo, hi)):
            _fail(path, "min corner exceeds max corner")
        if any(c < 0 for c in lo) or any(h >= d for h, d in zip(hi, dims)):
            _fail(path, "box exceeds world bounds")
        cells[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] = OCCUPIED
    world = WorldGrid(dims=dims, resolution=resolution, cells=cells)

    bboxes = []
    raw_boxes = doc.get("bboxes", [])
    if not isinstance(raw_boxes, list):
        _fail("bboxes", "must be a list")
    for k, rb in enumerate(raw_boxes):
        path = f"bboxes[{k}]"
        if not isinstance(rb, dict):
            _fail(path, "must be an object")
        bid = _as_int(_req(rb, "id", path), f"{path}.id")
        lo = _as_vox(_req(rb, "min", path), f"{path}.min")
        hi = _as_vox(_req(rb, "max", path), f"{path}.max")
        try:
            bboxes.append(BBox(id=bid, min_corner=lo, max_corner=hi))
        except ValueError as e:
            _fail(path, str(e))

    features = []
    raw_feats = doc.get("features", [])
    if not isinstance(raw_feats, list):
        _fail("features", "must be a list")
    for k, rf in enumerate(raw_feats):
        path = f"features[{k}]"
        if not isinstance(rf, dict):
            _fail(path, "must be an object")
        fid = _as_int(_req(rf, "id", path), f"{path}.id")
        pos = _as_vox(_req(rf, "position", path), f"{path}.position")
        raw_aoi = rf.get("aoi", [list(pos)])
        if not isinstance(raw_aoi, list) or not raw_aoi:
            _fail(f"{path}.aoi", "must be a non-empty list of voxels")
        aoi = tuple(_as_vox(v, f"{path}.aoi[{i}]") for i, v in enumerate(raw_aoi))
        duration = _as_int(rf.get("duration", 3), f"{path}.duration")
        pr = _as_int(rf.get("priority", 0), f"{path}.priority")
        if pr not in (0, 1):
            _fail(f"{path}.priority", "must be 0 (normal) or 1 (high)")
        payload = rf.get("payload", f"result-{fid}")
        if not isinstance(payload, str):
            _fail(f"{path}.payload", "must be a string")
        features.append(Feature(id=fid, position=pos, aoi=aoi,
                                inspect_duration=duration,
                                priority=Priority(pr), result_payload=payload))

    robots = []
    raw_robots = _req(doc, "robots", "$")
    if not isinstance(raw_robots, list) or not raw_robots:
        _fail("robots", "must be a non-empty list")
    for k, rr in enumerate(raw_robots):
        path = f"robots[{k}]"
        if not isinstance(rr, dict):
            _fail(path, "must be an object")
        role = _req(rr, "role", path)
        if role not in _ROLES:
            _fail(f"{path}.role", f"must be one of {_ROLES}, got {role!r}")
        robots.append(RobotSpec(
            id=_as_int(_req(rr, "id", path), f"{path}.id"),
            role=role,
            pose=_as_vox(_req(rr, "pose", path), f"{path}.pose"),
            speed=_as_num(rr.get("speed", 1.0), f"{path}.speed"),
            sensor_range=_as_num(rr.get("sensor_range", 6.0), f"{path}.sensor_range"),
            link_range=_as_num(rr.get("link_range", 12.0), f"{path}.link_range")))

    proto = doc.get("protocol", {})
    if not isinstance(proto, dict):
        _fail("protocol", "must be an object")
    energy = doc.get("energy", {})
    if not isinstance(energy, dict):
        _fail("energy", "must be an object")
    stations = [_as_vox(s, f"energy.stations[{i}]")
                for i, s in enumerate(energy.get("stations", []))]

    failures = []
    raw_fail = doc.get("failures", [])
    if not isinstance(raw_fail, list):
        _fail("failures", "must be a list of [robot_id, tick] pairs")
    for k, pair in enumerate(raw_fail):
        path = f"failures[{k}]"
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            _fail(path, f"expected [robot_id, tick], got {pair!r}")
        failures.append((_as_int(pair[0], f"{path}[0]"),
                         _as_int(pair[1], f"{path}[1]")))

    mode = doc.get("mode", MODE_SLEI3D)
    if mode not in _MODES:
        _fail("mode", f"must be one of {_MODES}, got {mode!r}")
    tick_budget = doc.get("tick_budget")
    if tick_budget is not None:
        tick_budget = _as_int(tick_budget, "tick_budget")

    fix_interval = proto.get("fix_interval")
    if fix_interval is not None:
        fix_interval = _as_int(fix_interval, "protocol.fix_interval")
    max_wait = proto.get("max_wait")
    if max_wait is not None:
        max_wait = _as_int(max_wait, "protocol.max_wait")

    cfg = SimConfig(
        world=world,
        bboxes=bboxes,
        features=features,
        robots=robots,
        seed=_as_int(doc.get("seed", 0), "seed"),
        delta_bar=_as_int(proto.get("delta_bar", 10), "protocol.delta_bar"),
        mode=mode,
        energy_enabled=bool(energy.get("enabled", False)),
        priors_enabled=bool(doc.get("priors", True)),
        failures=failures,
        tick_budget=tick_budget,
        soei_period=_as_int(proto.get("soei_period", 5), "protocol.soei_period"),
        n_samples=_as_int(proto.get("n_samples", 5), "protocol.n_samples"),
        frontier_cap=_as_int(proto.get("frontier_cap", 8), "protocol.frontier_cap"),
        initial_window=_as_int(proto.get("initial_window", 20),
                               "protocol.initial_window"),
        replan_period=_as_int(proto.get("replan_period", 5),
                              "protocol.replan_period"),
        fix_interval=fix_interval,
        max_wait=max_wait,
        fov_range=_as_num(proto.get("fov_range", 8.0), "protocol.fov_range"),
        e_max=_as_num(energy.get("e_max", 100.0), "energy.e_max"),
        e_min=_as_num(energy.get("e_min", 25.0), "energy.e_min"),
        alpha=_as_num(energy.get("alpha", 1.0), "energy.alpha"),
        beta=_as_num(energy.get("beta", 10.0), "energy.beta"),
        stations=stations,
        prior_free_min_dim=_as_num(doc.get("prior_free_min_dim", 16.0),
                                   "prior_free_min_dim"),
        ground_z=_as_int(proto.get("ground_z", 1), "protocol.ground_z"),
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise ScenarioError(str(e)) from None
    return cfg


def load_scenario_file(path: str) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return load_scenario(text)


def scenario_to_dict(cfg: SimConfig) -> dict:
    """The JSON form of a config; inverse of load_scenario for generated worlds.

    Occupied space is emitted as maximal x-runs over the non-shell cells,
    which reproduces the grid exactly whatever produced it.
    """
    w = cfg.world
    dims = w.dims
    shell = np.zeros(dims, dtype=bool)
    shell[0, :, :] = shell[-1, :, :] = True
    shell[:, 0, :] = shell[:, -1, :] = True
    shell[:, :, 0] = shell[:, :, -1] = True
    use_shell = bool((w.cells[shell] == OCCUPIED).all())
    runs = []
    occ = w.cells == OCCUPIED
    if use_shell:
        occ = occ & ~shell
    for z in range(dims[2]):
        for y in range(dims[1]):
            x = 0
            while x < dims[0]:
                if occ[x, y, z]:
                    x0 = x
                    while x < dims[0] and occ[x, y, z]:
                        x += 1
                    runs.append([x0, y, z, x - 1, y, z])
                else:
                    x += 1
    return {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "priors": cfg.priors_enabled,
        "prior_free_min_dim": cfg.prior_free_min_dim,
        "tick_budget": cfg.tick_budget,
        "world": {
            "dims": list(dims),
            "resolution": w.resolution,
            "shell": use_shell,
            "occupied": runs,
        },
        "bboxes": [{"id": b.id, "min": list(b.min_corner), "max": list(b.max_corner)}
                   for b in sorted(cfg.bboxes, key=lambda b: b.id)],
        "features": [{
            "id": f.id, "position": list(f.position),
            "aoi": [list(v) for v in f.aoi],
            "duration": f.inspect_duration, "priority": int(f.priority),
            "payload": f.result_payload,
        } for f in sorted(cfg.features, key=lambda f: f.id)],
        "robots": [{
            "id": r.id, "role": r.role, "pose": list(r.pose), "speed": r.speed,
            "sensor_range": r.sensor_range, "link_range": r.link_range,
        } for r in sorted(cfg.robots, key=lambda r: r.id)],
        "protocol": {
            "delta_bar": cfg.delta_bar,
            "soei_period": cfg.soei_period,
            "n_samples": cfg.n_samples,
            "frontier_cap": cfg.frontier_cap,
            "initial_window": cfg.initial_window,
            "replan_period": cfg.replan_period,
            "fix_interval": cfg.fix_interval,
            "max_wait": cfg.max_wait,
            "fov_range": cfg.fov_range,
            "ground_z": cfg.ground_z,
        },
        "energy": {
            "enabled": cfg.energy_enabled,
            "e_max": cfg.e_max, "e_min": cfg.e_min,
            "alpha": cfg.alpha, "beta": cfg.beta,
            "stations": [list(s) for s in cfg.stations],
        },
        "failures": [[rid, t] for rid, t in cfg.failures],
    }


def save_scenario(cfg: SimConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ generator

def _split_boxes(lo: Vox, hi: Vox, n: int) -> list[tuple[Vox, Vox]]:
    """Tile [lo, hi] into n boxes by repeatedly halving the largest box."""
    boxes = [(lo, hi)]
    while len(boxes) < n:
        k = max(range(len(boxes)),
                key=lambda i: ((boxes[i][1][0] - boxes[i][0][0] + 1)
                               * (boxes[i][1][1] - boxes[i][0][1] + 1)
                               * (boxes[i][1][2] - boxes[i][0][2] + 1), -i))
        blo, bhi = boxes.pop(k)
        ext = [bhi[i] - blo[i] + 1 for i in range(3)]
        axis = max(range(3), key=lambda i: (ext[i], -i))
        if ext[axis] < 2:
            boxes.append((blo, bhi))
            break
        cut = blo[axis] + ext[axis] // 2
        left_hi = list(bhi)
        left_hi[axis] = cut - 1
        right_lo = list(blo)
        right_lo[axis] = cut
        boxes.append((blo, tuple(left_hi)))
        boxes.append((tuple(right_lo), bhi))
    return sorted(boxes)


def gen_scenario(
    size: Vox = (20, 20, 8),
    n_bboxes: int = 2,
    n_features: int = 4,
    fleet: tuple[int, int, int] = (1, 2, 2),
    seed: int = 0,
    mode: str = MODE_SLEI3D,
    energy: bool = False,
    priors: bool = True,
    failures: list[tuple[int, int]] | None = None,
) -> SimConfig:
    """Deterministic mission generator.

    Builds a walled room with scattered pillars, tiles its interior into
    search boxes, mounts features on pillar faces, and packs the fleet into
    a common start corner. Every feature viewpoint is checked reachable from
    the start before the scenario is returned, so a generated mission is
    solvable by construction.
    """
    nx, ny, nz = size
    if min(size) < 8:
        raise ScenarioError("generator needs at least 8 voxels per axis")
    n_gcs, n_exp, n_insp = fleet
    if n_gcs < 1 or n_exp < 1 or n_insp < 0:
        raise ScenarioError("fleet needs at least one ground station and one explorer")
    rng = rng_mod.stream_rng(seed, "scenario", nx, ny, nz)

    cells = np.full(size, FREE, dtype=np.uint8)
    cells[0, :, :] = cells[-1, :, :] = OCCUPIED
    cells[:, 0, :] = cells[:, -1, :] = OCCUPIED
    cells[:, :, 0] = cells[:, :, -1] = OCCUPIED

    # Start corner: a clear apron the fleet and the chargers sit in. Every
    # robot gets its own pad: identical batteries drain in lockstep, so the
    # whole fleet tends to come in for its first recharge at once.
    apron = {(x, y, 1) for x in range(1, 6) for y in range(1, 6)}
    total = n_gcs + n_exp + n_insp
    pads = [(x, y, 1) for y in (1, 3, 5) for x in (1, 3, 5)][:total]
    if total > len(apron) - len(pads):
        raise ScenarioError(
            f"fleet of {total} does not fit the {len(apron) - len(pads)}-voxel start area")

    # Pillars: vertical columns the features mount on. They stand clear of
    # the apron and of each other, so no region can get sealed off.
    n_pillars = max(2, (nx * ny) // 60)
    pillar_cells: list[Vox] = []
    taken: set[tuple[int, int]] = set()
    tries = 0
    while len(taken) < n_pillars and tries < 200:
        tries += 1
        px = rng.randrange(3, nx - 3)
        py = rng.randrange(3, ny - 3)
        if px < 8 and py < 8:
            continue  # keep the start corner open
        if any(abs(px - qx) < 3 and abs(py - qy) < 3 for qx, qy in taken):
            continue
        taken.add((px, py))
        height = rng.randrange(2, max(3, nz - 2))
        for z in range(1, 1 + height):
            cells[px, py, z] = OCCUPIED
            pillar_cells.append((px, py, z))
    if not pillar_cells:
        raise ScenarioError("world too small to place any structure")
    world = WorldGrid(dims=size, resolution=1.0, cells=cells)

    interior_lo = (1, 1, 1)
    interior_hi = (nx - 2, ny - 2, nz - 2)
    bboxes = [BBox(id=i, min_corner=lo, max_corner=hi)
              for i, (lo, hi) in enumerate(_split_boxes(interior_lo, interior_hi,
                                                        n_bboxes))]

    start = (2, 2, 1)
    features: list[Feature] = []
    sides = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1)]
    cand_viewpoints: list[tuple[Vox, Vox]] = []
    for pc in sorted(set(pillar_cells)):
        for d in sides:
            vp = (pc[0] + d[0], pc[1] + d[1], pc[2] + d[2])
            if world.in_bounds(vp) and cells[vp] == FREE:
                cand_viewpoints.append((vp, pc))
    rng.shuffle(cand_viewpoints)
    used: set[Vox] = set()
    for vp, pc in cand_viewpoints:
        if len(features) >= n_features:
            break
        if vp in used or vp in apron:
            continue
        path = astar_path(world, start, vp, 1.0)
        if path is None:
            continue
        used.add(vp)
        fid = len(features)
        features.append(Feature(
            id=fid, position=vp, aoi=(pc,),
            inspect_duration=rng.randrange(2, 5),
            priority=Priority.HIGH if rng.random() < 0.2 else Priority.NORMAL,
            result_payload=f"scan-{fid:03d}-" + "".join(
                rng.choice("0123456789abcdef") for _ in range(8))))
    if len(features) < n_features:
        raise ScenarioError(
            f"could only place {len(features)} of {n_features} features; "
            "use a larger world or fewer features")

    spots = sorted(apron - set(pads))
    robots: list[RobotSpec] = []
    rid = 0
    for _ in range(n_gcs):
        robots.append(RobotSpec(id=rid, role=ROLE_GCS, pose=spots.pop(0),
                                speed=1.0, sensor_range=5.0, link_range=14.0))
        rid += 1
    for _ in range(n_exp):
        robots.append(RobotSpec(id=rid, role=ROLE_EXPLORER, pose=spots.pop(0),
                                speed=1.0, sensor_range=6.0, link_range=14.0))
        rid += 1
    for _ in range(n_insp):
        robots.append(RobotSpec(id=rid, role=ROLE_INSPECTOR, pose=spots.pop(0),
                                speed=1.0, sensor_range=4.0, link_range=14.0))
        rid += 1

    return SimConfig(
        world=world,
        bboxes=bboxes,
        features=features,
        robots=robots,
        seed=seed,
        mode=mode,
        energy_enabled=energy,
        priors_enabled=priors,
        failures=list(failures or []),
        stations=pads,
    )
