"""Pure-Python fallback for the geometric hot kernels.

Mirrors the compiled module in voxfleet._kernels._core: same signatures, same
results (path lengths may be realized by a different but equal-cost path).
Grids are C-contiguous uint8 arrays of shape (nx, ny, nz) with cell states
UNKNOWN=0, FREE=1, OCCUPIED=2.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

NAME = "pure"

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

# Offsets crossed by the center-to-center segment for a given integer delta,
# excluding both endpoints. Translation invariant, so cached per delta.
_COVER_CACHE: dict[tuple[int, int, int], tuple[tuple[int, int, int], ...]] = {}


def _supercover_offsets(dx: int, dy: int, dz: int) -> tuple[tuple[int, int, int], ...]:
    key = (dx, dy, dz)
    cached = _COVER_CACHE.get(key)
    if cached is not None:
        return cached
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    sz = 1 if dz > 0 else -1
    adx, ady, adz = abs(dx), abs(dy), abs(dz)
    # Crossing k of an axis with |d| = n happens at t = (2k+1)/(2n); compare
    # fractions by cross-multiplication so ties (edge/corner hits) are exact.
    kx = ky = kz = 0
    cx = cy = cz = 0
    out: list[tuple[int, int, int]] = []
    while kx < adx or ky < ady or kz < adz:
        tx_num, tx_den = (2 * kx + 1, 2 * adx) if kx < adx else (1, 0)
        ty_num, ty_den = (2 * ky + 1, 2 * ady) if ky < ady else (1, 0)
        tz_num, tz_den = (2 * kz + 1, 2 * adz) if kz < adz else (1, 0)
        # den == 0 encodes "no more crossings on this axis" (t = infinity)
        hit_x = hit_y = hit_z = False
        best_num, best_den = tx_num, tx_den
        if tx_den:
            hit_x = True
        if ty_den and (not hit_x or ty_num * best_den < best_num * ty_den):
            hit_x, hit_y = False, True
            best_num, best_den = ty_num, ty_den
        elif ty_den and hit_x and ty_num * best_den == best_num * ty_den:
            hit_y = True
        if tz_den and (not (hit_x or hit_y) or tz_num * best_den < best_num * tz_den):
            hit_x = hit_y = False
            hit_z = True
        elif tz_den and (hit_x or hit_y) and tz_num * best_den == best_num * tz_den:
            hit_z = True
        # A simultaneous crossing means the segment passes through a shared
        # edge/corner; every voxel incident to that point counts as touched.
        steps = []
        if hit_x:
            steps.append((sx, 0, 0))
        if hit_y:
            steps.append((0, sy, 0))
        if hit_z:
            steps.append((0, 0, sz))
        if len(steps) == 1:
            ox, oy, oz = steps[0]
            cx, cy, cz = cx + ox, cy + oy, cz + oz
            out.append((cx, cy, cz))
        else:
            for i in range(1, 1 << len(steps)):
                ox = oy = oz = 0
                for b, (vx, vy, vz) in enumerate(steps):
                    if i >> b & 1:
                        ox, oy, oz = ox + vx, oy + vy, oz + vz
                out.append((cx + ox, cy + oy, cz + oz))
            for vx, vy, vz in steps:
                cx, cy, cz = cx + vx, cy + vy, cz + vz
        if hit_x:
            kx += 1
        if hit_y:
            ky += 1
        if hit_z:
            kz += 1
    # Drop the destination voxel; callers treat endpoints as transparent.
    dest = (dx, dy, dz)
    result = tuple(o for o in out if o != dest)
    _COVER_CACHE[key] = result
    return result


def segment_blocked(cells: np.ndarray, ax: int, ay: int, az: int,
                    bx: int, by: int, bz: int, require_free: bool = False) -> bool:
    """True iff a voxel strictly between the two endpoints blocks the segment.

    With require_free, any non-Free intermediate voxel blocks (used for
    conservative planning checks); otherwise only Occupied blocks.
    """
    for ox, oy, oz in _supercover_offsets(bx - ax, by - ay, bz - az):
        v = cells[ax + ox, ay + oy, az + oz]
        if v == OCCUPIED or (require_free and v != FREE):
            return True
    return False


def sense_update(truth: np.ndarray, local: np.ndarray, px: int, py: int, pz: int,
                 range_vox: float) -> list[tuple[int, int, int]]:
    """Copy every in-range, line-of-sight voxel from truth into local.

    Returns the coordinates that were Unknown before, in lexicographic order.
    """
    nx, ny, nz = truth.shape
    r = int(math.floor(range_vox))
    r2 = range_vox * range_vox
    new: list[tuple[int, int, int]] = []
    for x in range(max(0, px - r), min(nx, px + r + 1)):
        ddx = (x - px) * (x - px)
        for y in range(max(0, py - r), min(ny, py + r + 1)):
            ddxy = ddx + (y - py) * (y - py)
            if ddxy > r2:
                continue
            for z in range(max(0, pz - r), min(nz, pz + r + 1)):
                if ddxy + (z - pz) * (z - pz) > r2:
                    continue
                blocked = False
                for ox, oy, oz in _supercover_offsets(x - px, y - py, z - pz):
                    if truth[px + ox, py + oy, pz + oz] == OCCUPIED:
                        blocked = True
                        break
                if blocked:
                    continue
                if local[x, y, z] == UNKNOWN:
                    new.append((x, y, z))
                local[x, y, z] = truth[x, y, z]
    return new


def sweep_update(local: np.ndarray, swept: np.ndarray, px: int, py: int, pz: int,
                 range_vox: float) -> None:
    """Mark every in-range voxel whose sight line crosses only known-Free cells.

    Stricter than sensing (Unknown blocks too), so a marked voxel was
    provably inspectable from this pose on this map.
    """
    nx, ny, nz = local.shape
    r = int(math.floor(range_vox))
    r2 = range_vox * range_vox
    for x in range(max(0, px - r), min(nx, px + r + 1)):
        ddx = (x - px) * (x - px)
        for y in range(max(0, py - r), min(ny, py + r + 1)):
            ddxy = ddx + (y - py) * (y - py)
            if ddxy > r2:
                continue
            for z in range(max(0, pz - r), min(nz, pz + r + 1)):
                if swept[x, y, z]:
                    continue
                if ddxy + (z - pz) * (z - pz) > r2:
                    continue
                blocked = False
                for ox, oy, oz in _supercover_offsets(x - px, y - py, z - pz):
                    if local[px + ox, py + oy, pz + oz] != FREE:
                        blocked = True
                        break
                if not blocked:
                    swept[x, y, z] = 1


def frontier_scan(local: np.ndarray, x0: int, y0: int, z0: int,
                  x1: int, y1: int, z1: int) -> list[tuple[int, int, int]]:
    """Free voxels inside the inclusive box that 6-touch an Unknown voxel also inside it."""
    box = local[x0:x1 + 1, y0:y1 + 1, z0:z1 + 1]
    free = box == FREE
    unknown = box == UNKNOWN
    near = np.zeros_like(free)
    near[:-1, :, :] |= unknown[1:, :, :]
    near[1:, :, :] |= unknown[:-1, :, :]
    near[:, :-1, :] |= unknown[:, 1:, :]
    near[:, 1:, :] |= unknown[:, :-1, :]
    near[:, :, :-1] |= unknown[:, :, 1:]
    near[:, :, 1:] |= unknown[:, :, :-1]
    xs, ys, zs = np.nonzero(free & near)
    return [(int(x) + x0, int(y) + y0, int(z) + z0) for x, y, z in zip(xs, ys, zs)]


_OFFSETS_26 = [(dx, dy, dz)
               for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
               if (dx, dy, dz) != (0, 0, 0)]
_OFFSETS_8 = [(dx, dy, 0) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]


def _build_graph(cells: np.ndarray, z_lock: int, extra_passable: int):
    """CSR adjacency over passable voxels (everything except Occupied)."""
    nx, ny, nz = cells.shape
    passable = cells != OCCUPIED
    if extra_passable >= 0:
        flat = passable.reshape(-1).copy()
        flat[extra_passable] = True
        passable = flat.reshape(cells.shape)
    if z_lock >= 0:
        plane = np.zeros_like(passable)
        plane[:, :, z_lock] = True
        passable &= plane
        offsets = _OFFSETS_8
    else:
        offsets = _OFFSETS_26
    n = nx * ny * nz
    rows, cols, data = [], [], []
    for dx, dy, dz in offsets:
        sa = passable[max(0, -dx):nx - max(0, dx), max(0, -dy):ny - max(0, dy), max(0, -dz):nz - max(0, dz)]
        sb = passable[max(0, dx):nx - max(0, -dx), max(0, dy):ny - max(0, -dy), max(0, dz):nz - max(0, -dz)]
        both = sa & sb
        xs, ys, zs = np.nonzero(both)
        src = ((xs + max(0, -dx)) * ny + (ys + max(0, -dy))) * nz + (zs + max(0, -dz))
        dst = ((xs + max(0, dx)) * ny + (ys + max(0, dy))) * nz + (zs + max(0, dz))
        rows.append(src)
        cols.append(dst)
        data.append(np.full(len(xs), math.sqrt(dx * dx + dy * dy + dz * dz)))
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.concatenate(data)
    return csr_matrix((data, (rows, cols)), shape=(n, n)), passable


def dijkstra_field(cells: np.ndarray, sx: int, sy: int, sz: int,
                   z_lock: int = -1) -> np.ndarray:
    """Voxel-unit shortest distances from the source to every voxel (inf if cut off).

    The source voxel is always treated as passable (a robot stands there).
    """
    nx, ny, nz = cells.shape
    src = (sx * ny + sy) * nz + sz
    if z_lock >= 0 and sz != z_lock:
        return np.full(cells.shape, np.inf)
    graph, _ = _build_graph(cells, z_lock, src)
    dist = _csgraph_dijkstra(graph, directed=False, indices=src)
    return dist.reshape(cells.shape)


def astar_path(cells: np.ndarray, sx: int, sy: int, sz: int,
               gx: int, gy: int, gz: int, z_lock: int = -1):
    """Shortest path through non-Occupied voxels, or None.

    Returns the list of voxels from start to goal inclusive.
    """
    nx, ny, nz = cells.shape
    if cells[gx, gy, gz] == OCCUPIED:
        return None
    if (sx, sy, sz) == (gx, gy, gz):
        return [(sx, sy, sz)]
    if z_lock >= 0 and (sz != z_lock or gz != z_lock):
        return None
    src = (sx * ny + sy) * nz + sz
    dst = (gx * ny + gy) * nz + gz
    graph, _ = _build_graph(cells, z_lock, src)
    dist, pred = _csgraph_dijkstra(graph, directed=False, indices=src, return_predecessors=True)
    if not np.isfinite(dist[dst]):
        return None
    path = []
    node = dst
    while node != src:
        path.append(node)
        node = int(pred[node])
    path.append(src)
    path.reverse()
    return [(n // (ny * nz), (n // nz) % ny, n % nz) for n in path]
