# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometric kernels: supercover raycast, sensor sweep, frontier scan,
Dijkstra distance field, A* path. Mirrors voxfleet._kernels.pure."""

from libc.math cimport sqrt, floor
from libc.stdlib cimport malloc, free

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "compiled"

DEF UNKNOWN = 0
DEF FREE = 1
DEF OCCUPIED = 2


cdef inline bint _blocked_at(const unsigned char[:, :, ::1] cells,
                             long x, long y, long z, bint require_free) nogil:
    cdef unsigned char v = cells[x, y, z]
    if v == OCCUPIED:
        return True
    if require_free and v != FREE:
        return True
    return False


cdef bint _seg_blocked(const unsigned char[:, :, ::1] cells,
                       long ax, long ay, long az, long bx, long by, long bz,
                       bint require_free) nogil:
    """Supercover traversal between voxel centers; endpoints are transparent.

    Crossing k of an axis with |d| = n happens at t = (2k+1)/(2n); fractions are
    compared by cross-multiplication so edge/corner ties are exact, and every
    voxel incident to a tied crossing point is checked (conservative blocking).
    """
    cdef long dx = bx - ax, dy = by - ay, dz = bz - az
    cdef long sx = 1 if dx > 0 else -1
    cdef long sy = 1 if dy > 0 else -1
    cdef long sz = 1 if dz > 0 else -1
    cdef long adx = dx if dx > 0 else -dx
    cdef long ady = dy if dy > 0 else -dy
    cdef long adz = dz if dz > 0 else -dz
    cdef long kx = 0, ky = 0, kz = 0
    cdef long cx = 0, cy = 0, cz = 0
    cdef long tnx, tny, tnz, bn, bd
    cdef bint hx, hy, hz
    cdef long vx, vy, vz, i, nb
    cdef long stx[3]
    cdef long sty[3]
    cdef long stz[3]
    while kx < adx or ky < ady or kz < adz:
        hx = hy = hz = False
        bn = 1
        bd = 0
        if kx < adx:
            hx = True
            bn = 2 * kx + 1
            bd = 2 * adx
        if ky < ady:
            tny = 2 * ky + 1
            if not hx or tny * bd < bn * (2 * ady):
                hx = False
                hy = True
                bn = tny
                bd = 2 * ady
            elif hx and tny * bd == bn * (2 * ady):
                hy = True
        if kz < adz:
            tnz = 2 * kz + 1
            if (not (hx or hy)) or tnz * bd < bn * (2 * adz):
                hx = hy = False
                hz = True
            elif (hx or hy) and tnz * bd == bn * (2 * adz):
                hz = True
        nb = 0
        if hx:
            stx[nb] = sx; sty[nb] = 0; stz[nb] = 0; nb += 1
        if hy:
            stx[nb] = 0; sty[nb] = sy; stz[nb] = 0; nb += 1
        if hz:
            stx[nb] = 0; sty[nb] = 0; stz[nb] = sz; nb += 1
        if nb == 1:
            cx += stx[0]; cy += sty[0]; cz += stz[0]
            if not (cx == dx and cy == dy and cz == dz):
                if _blocked_at(cells, ax + cx, ay + cy, az + cz, require_free):
                    return True
        else:
            for i in range(1, 1 << nb):
                vx = cx; vy = cy; vz = cz
                if i & 1:
                    vx += stx[0]; vy += sty[0]; vz += stz[0]
                if i & 2:
                    vx += stx[1]; vy += sty[1]; vz += stz[1]
                if i & 4:
                    vx += stx[2]; vy += sty[2]; vz += stz[2]
                if not (vx == dx and vy == dy and vz == dz):
                    if _blocked_at(cells, ax + vx, ay + vy, az + vz, require_free):
                        return True
            for i in range(nb):
                cx += stx[i]; cy += sty[i]; cz += stz[i]
        if hx:
            kx += 1
        if hy:
            ky += 1
        if hz:
            kz += 1
    return False


def segment_blocked(const unsigned char[:, :, ::1] cells, long ax, long ay, long az,
                    long bx, long by, long bz, bint require_free=False):
    return bool(_seg_blocked(cells, ax, ay, az, bx, by, bz, require_free))


def sense_update(const unsigned char[:, :, ::1] truth, unsigned char[:, :, ::1] local,
                 long px, long py, long pz, double range_vox):
    cdef long nx = truth.shape[0], ny = truth.shape[1], nz = truth.shape[2]
    cdef long r = <long>floor(range_vox)
    cdef double r2 = range_vox * range_vox
    cdef long x0 = px - r if px - r > 0 else 0
    cdef long x1 = px + r + 1 if px + r + 1 < nx else nx
    cdef long y0 = py - r if py - r > 0 else 0
    cdef long y1 = py + r + 1 if py + r + 1 < ny else ny
    cdef long z0 = pz - r if pz - r > 0 else 0
    cdef long z1 = pz + r + 1 if pz + r + 1 < nz else nz
    cdef long x, y, z
    cdef double ddx, ddxy, ddxyz
    new = []
    for x in range(x0, x1):
        ddx = <double>((x - px) * (x - px))
        for y in range(y0, y1):
            ddxy = ddx + (y - py) * (y - py)
            if ddxy > r2:
                continue
            for z in range(z0, z1):
                if ddxy + (z - pz) * (z - pz) > r2:
                    continue
                if _seg_blocked(truth, px, py, pz, x, y, z, False):
                    continue
                if local[x, y, z] == UNKNOWN:
                    new.append((x, y, z))
                local[x, y, z] = truth[x, y, z]
    return new


def sweep_update(const unsigned char[:, :, ::1] local, unsigned char[:, :, ::1] swept,
                 long px, long py, long pz, double range_vox):
    """Mark every in-range voxel whose sight line crosses only known-Free cells.

    Stricter than sensing (Unknown blocks too), so a marked voxel was
    provably inspectable from this pose on this map.
    """
    cdef long nx = local.shape[0], ny = local.shape[1], nz = local.shape[2]
    cdef long r = <long>floor(range_vox)
    cdef double r2 = range_vox * range_vox
    cdef long x0 = px - r if px - r > 0 else 0
    cdef long x1 = px + r + 1 if px + r + 1 < nx else nx
    cdef long y0 = py - r if py - r > 0 else 0
    cdef long y1 = py + r + 1 if py + r + 1 < ny else ny
    cdef long z0 = pz - r if pz - r > 0 else 0
    cdef long z1 = pz + r + 1 if pz + r + 1 < nz else nz
    cdef long x, y, z
    cdef double ddx, ddxy
    with nogil:
        for x in range(x0, x1):
            ddx = <double>((x - px) * (x - px))
            for y in range(y0, y1):
                ddxy = ddx + (y - py) * (y - py)
                if ddxy > r2:
                    continue
                for z in range(z0, z1):
                    if swept[x, y, z]:
                        continue
                    if ddxy + (z - pz) * (z - pz) > r2:
                        continue
                    if _seg_blocked(local, px, py, pz, x, y, z, True):
                        continue
                    swept[x, y, z] = 1


def frontier_scan(const unsigned char[:, :, ::1] local, long x0, long y0, long z0,
                  long x1, long y1, long z1):
    cdef long x, y, z
    cdef bint hit
    out = []
    for x in range(x0, x1 + 1):
        for y in range(y0, y1 + 1):
            for z in range(z0, z1 + 1):
                if local[x, y, z] != FREE:
                    continue
                hit = False
                if x > x0 and local[x - 1, y, z] == UNKNOWN:
                    hit = True
                elif x < x1 and local[x + 1, y, z] == UNKNOWN:
                    hit = True
                elif y > y0 and local[x, y - 1, z] == UNKNOWN:
                    hit = True
                elif y < y1 and local[x, y + 1, z] == UNKNOWN:
                    hit = True
                elif z > z0 and local[x, y, z - 1] == UNKNOWN:
                    hit = True
                elif z < z1 and local[x, y, z + 1] == UNKNOWN:
                    hit = True
                if hit:
                    out.append((x, y, z))
    return out


cdef struct Heap:
    double *key
    long *tie
    long *node
    long size
    long cap


cdef inline void _heap_init(Heap *h, long cap) nogil:
    h.key = <double *>malloc(cap * sizeof(double))
    h.tie = <long *>malloc(cap * sizeof(long))
    h.node = <long *>malloc(cap * sizeof(long))
    h.size = 0
    h.cap = cap


cdef inline void _heap_free(Heap *h) nogil:
    free(h.key)
    free(h.tie)
    free(h.node)


cdef inline bint _heap_less(Heap *h, long i, long j) nogil:
    if h.key[i] != h.key[j]:
        return h.key[i] < h.key[j]
    return h.tie[i] < h.tie[j]


cdef inline void _heap_swap(Heap *h, long i, long j) nogil:
    cdef double tk = h.key[i]
    cdef long tt = h.tie[i], tn = h.node[i]
    h.key[i] = h.key[j]; h.tie[i] = h.tie[j]; h.node[i] = h.node[j]
    h.key[j] = tk; h.tie[j] = tt; h.node[j] = tn


cdef void _heap_push(Heap *h, double key, long tie, long node) nogil:
    cdef long i, parent
    cdef double *nk
    cdef long *nt
    cdef long *nn
    if h.size == h.cap:
        h.cap *= 2
        nk = <double *>malloc(h.cap * sizeof(double))
        nt = <long *>malloc(h.cap * sizeof(long))
        nn = <long *>malloc(h.cap * sizeof(long))
        for i in range(h.size):
            nk[i] = h.key[i]; nt[i] = h.tie[i]; nn[i] = h.node[i]
        free(h.key); free(h.tie); free(h.node)
        h.key = nk; h.tie = nt; h.node = nn
    i = h.size
    h.key[i] = key; h.tie[i] = tie; h.node[i] = node
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _heap_less(h, i, parent):
            _heap_swap(h, i, parent)
            i = parent
        else:
            break


cdef long _heap_pop(Heap *h) nogil:
    cdef long top = h.node[0]
    cdef long i = 0, left, right, best
    h.size -= 1
    if h.size > 0:
        h.key[0] = h.key[h.size]; h.tie[0] = h.tie[h.size]; h.node[0] = h.node[h.size]
        while True:
            left = 2 * i + 1
            right = left + 1
            best = i
            if left < h.size and _heap_less(h, left, best):
                best = left
            if right < h.size and _heap_less(h, right, best):
                best = right
            if best == i:
                break
            _heap_swap(h, i, best)
            i = best
    return top


cdef long _neighbor_table(long ny, long nz, bint planar, long *offs, long *dxs,
                          long *dys, long *dzs, double *costs) nogil:
    cdef long n = 0
    cdef long dx, dy, dz
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                if planar and dz != 0:
                    continue
                offs[n] = (dx * ny + dy) * nz + dz
                dxs[n] = dx; dys[n] = dy; dzs[n] = dz
                costs[n] = sqrt(<double>(dx * dx + dy * dy + dz * dz))
                n += 1
    return n


def dijkstra_field(const unsigned char[:, :, ::1] cells, long sx, long sy, long sz,
                   long z_lock=-1):
    cdef long nx = cells.shape[0], ny = cells.shape[1], nz = cells.shape[2]
    cdef long n = nx * ny * nz
    dist_arr = np.full((nx, ny, nz), np.inf)
    cdef double[:, :, ::1] dist = dist_arr
    if z_lock >= 0 and sz != z_lock:
        return dist_arr
    cdef long offs[26]
    cdef long dxs[26]
    cdef long dys[26]
    cdef long dzs[26]
    cdef double costs[26]
    cdef long deg = _neighbor_table(ny, nz, z_lock >= 0, offs, dxs, dys, dzs, costs)
    cdef Heap h
    cdef long counter = 0, node, i, x, y, z, mx, my, mz
    cdef double d, nd
    with nogil:
        _heap_init(&h, 4 * n + 16)
        dist[sx, sy, sz] = 0.0
        _heap_push(&h, 0.0, counter, (sx * ny + sy) * nz + sz)
        counter += 1
        while h.size > 0:
            d = h.key[0]
            node = _heap_pop(&h)
            x = node // (ny * nz); y = (node // nz) % ny; z = node % nz
            if d > dist[x, y, z]:
                continue
            for i in range(deg):
                mx = x + dxs[i]; my = y + dys[i]; mz = z + dzs[i]
                if mx < 0 or mx >= nx or my < 0 or my >= ny or mz < 0 or mz >= nz:
                    continue
                if z_lock >= 0 and mz != z_lock:
                    continue
                if cells[mx, my, mz] == OCCUPIED:
                    continue
                nd = d + costs[i]
                if nd < dist[mx, my, mz]:
                    dist[mx, my, mz] = nd
                    _heap_push(&h, nd, counter, node + offs[i])
                    counter += 1
        _heap_free(&h)
    return dist_arr


def astar_path(const unsigned char[:, :, ::1] cells, long sx, long sy, long sz,
               long gx, long gy, long gz, long z_lock=-1):
    cdef long nx = cells.shape[0], ny = cells.shape[1], nz = cells.shape[2]
    cdef long n = nx * ny * nz
    if cells[gx, gy, gz] == OCCUPIED:
        return None
    if sx == gx and sy == gy and sz == gz:
        return [(sx, sy, sz)]
    if z_lock >= 0 and (sz != z_lock or gz != z_lock):
        return None
    cdef long offs[26]
    cdef long dxs[26]
    cdef long dys[26]
    cdef long dzs[26]
    cdef double costs[26]
    cdef long deg = _neighbor_table(ny, nz, z_lock >= 0, offs, dxs, dys, dzs, costs)
    g_arr = np.full(n, np.inf)
    parent_arr = np.full(n, -1, dtype=np.int64)
    cdef double[::1] g = g_arr
    cdef long[::1] parent = parent_arr
    cdef Heap h
    cdef long counter = 0, node, i, x, y, z, mx, my, mz, src, dst
    cdef double d, nd, hx
    cdef bint found = False
    src = (sx * ny + sy) * nz + sz
    dst = (gx * ny + gy) * nz + gz
    with nogil:
        _heap_init(&h, 4 * n + 16)
        g[src] = 0.0
        _heap_push(&h, sqrt(<double>((sx - gx) ** 2 + (sy - gy) ** 2 + (sz - gz) ** 2)), counter, src)
        counter += 1
        while h.size > 0:
            node = _heap_pop(&h)
            if node == dst:
                found = True
                break
            x = node // (ny * nz); y = (node // nz) % ny; z = node % nz
            d = g[node]
            for i in range(deg):
                mx = x + dxs[i]; my = y + dys[i]; mz = z + dzs[i]
                if mx < 0 or mx >= nx or my < 0 or my >= ny or mz < 0 or mz >= nz:
                    continue
                if z_lock >= 0 and mz != z_lock:
                    continue
                if cells[mx, my, mz] == OCCUPIED:
                    continue
                nd = d + costs[i]
                if nd < g[node + offs[i]]:
                    g[node + offs[i]] = nd
                    parent[node + offs[i]] = node
                    hx = sqrt(<double>((mx - gx) ** 2 + (my - gy) ** 2 + (mz - gz) ** 2))
                    _heap_push(&h, nd + hx, counter, node + offs[i])
                    counter += 1
        _heap_free(&h)
    if not found:
        return None
    path = []
    node = dst
    while node != -1:
        path.append((node // (ny * nz), (node // nz) % ny, node % nz))
        node = parent[node]
    path.reverse()
    return path
