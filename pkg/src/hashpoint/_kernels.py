"""Numba kernels for the per-point and per-ray hot loops.

Every search structure funnels candidate points through the same inlined
cone test so that borderline accept/reject decisions are bitwise identical
across structures.  All kernels are single-threaded and deterministic; the
``nogil`` flag lets callers run independent batches on worker threads.

Query kernels emit each ray's matches into a scratch buffer sized for the
whole cloud (a point can match a ray at most once) and append the finished
segment to the output arrays afterwards; reallocation never happens inside
a per-point loop, which would otherwise defeat vectorization.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(inline="always")
def _cone_test(px0, px1, px2, d0, d1, d2, t_near, t_far, slope):
    """Accept test: projection parameter in range, perpendicular distance
    within the adaptive radius ``slope * t``.  Returns (ok, t, dist_perp²)."""
    t = px0 * d0 + px1 * d1 + px2 * d2
    if t < t_near or t > t_far:
        return False, t, 0.0
    e0 = px0 - t * d0
    e1 = px1 - t * d1
    e2 = px2 - t * d2
    dist2 = e0 * e0 + e1 * e1 + e2 * e2
    r = t * slope
    if dist2 > r * r:
        return False, t, dist2
    return True, t, dist2


@njit(**_JIT)
def _canonical_sort(ids, ts, ds, hi):
    """Sort the first ``hi`` scratch entries by (t, id) ascending, in place."""
    if hi <= 1:
        return
    order = np.argsort(ts[:hi], kind="mergesort")
    tmp_i = np.empty(hi, np.int64)
    tmp_t = np.empty(hi, np.float64)
    tmp_d = np.empty(hi, np.float64)
    for j in range(hi):
        s = order[j]
        tmp_i[j] = ids[s]
        tmp_t[j] = ts[s]
        tmp_d[j] = ds[s]
    # exact-tie runs in t get ascending point ids
    start = 0
    while start < hi:
        end = start + 1
        while end < hi and tmp_t[end] == tmp_t[start]:
            end += 1
        for a in range(start + 1, end):
            ki, kt, kd = tmp_i[a], tmp_t[a], tmp_d[a]
            b = a - 1
            while b >= start and tmp_i[b] > ki:
                tmp_i[b + 1] = tmp_i[b]
                tmp_t[b + 1] = tmp_t[b]
                tmp_d[b + 1] = tmp_d[b]
                b -= 1
            tmp_i[b + 1] = ki
            tmp_t[b + 1] = kt
            tmp_d[b + 1] = kd
        start = end
    ids[:hi] = tmp_i
    ts[:hi] = tmp_t
    ds[:hi] = tmp_d


@njit(**_JIT)
def scatter_by_bucket(buckets, orig_ids, cursor, out_ids):
    """Counting-sort placement pass: stable within a bucket by input order."""
    for j in range(buckets.shape[0]):
        b = buckets[j]
        p = cursor[b]
        out_ids[p] = orig_ids[j]
        cursor[b] = p + 1


@njit(**_JIT)
def hash_query_batch(table_start, table_count, slot_x, slot_y, slot_z, slot_ids,
                     padded_w, pad, px_u, px_v, dirs, origin,
                     t_near, t_far, slopes):
    """Probe the s*s kernel around each ray's pixel and cone-test its points.

    Returns CSR results plus per-ray table-probe and point-scan counters.
    """
    m = px_u.shape[0]
    n = slot_ids.shape[0]
    offsets = np.zeros(m + 1, np.int64)
    probes = np.zeros(m, np.int64)
    scanned = np.zeros(m, np.int64)
    sc_i = np.empty(max(n, 1), np.int64)
    sc_t = np.empty(max(n, 1), np.float64)
    sc_d = np.empty(max(n, 1), np.float64)
    out_i = np.empty(1024, np.int64)
    out_t = np.empty(1024, np.float64)
    out_d = np.empty(1024, np.float64)
    k = 0
    o0, o1, o2 = origin[0], origin[1], origin[2]
    for ri in range(m):
        d0 = dirs[ri, 0]
        d1 = dirs[ri, 1]
        d2 = dirs[ri, 2]
        tn = t_near[ri]
        tf = t_far[ri]
        slope = slopes[ri]
        cu = px_u[ri] + pad
        cv = px_v[ri] + pad
        kr = 0
        nprobe = 0
        nscan = 0
        for dv in range(-pad, pad + 1):
            row = (cv + dv) * padded_w
            for du in range(-pad, pad + 1):
                lin = row + cu + du
                nprobe += 1
                cnt = table_count[lin]
                if cnt == 0:
                    continue
                s0 = table_start[lin]
                nscan += cnt
                for s in range(s0, s0 + cnt):
                    ok, t, dist2 = _cone_test(
                        slot_x[s] - o0, slot_y[s] - o1, slot_z[s] - o2,
                        d0, d1, d2, tn, tf, slope)
                    if ok:
                        sc_i[kr] = slot_ids[s]
                        sc_t[kr] = t
                        sc_d[kr] = np.sqrt(dist2)
                        kr += 1
        probes[ri] = nprobe
        scanned[ri] = nscan
        _canonical_sort(sc_i, sc_t, sc_d, kr)
        if k + kr > out_i.shape[0]:
            cap = max(2 * out_i.shape[0], k + kr)
            tmp = np.empty(cap, np.int64)
            tmp[:k] = out_i[:k]
            out_i = tmp
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_t[:k]
            out_t = tmpf
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_d[:k]
            out_d = tmpf
        out_i[k:k + kr] = sc_i[:kr]
        out_t[k:k + kr] = sc_t[:kr]
        out_d[k:k + kr] = sc_d[:kr]
        k += kr
        offsets[ri + 1] = k
    return offsets, out_i[:k].copy(), out_t[:k].copy(), out_d[:k].copy(), probes, scanned


@njit(**_JIT)
def _brute_scan_chunk(xs, ys, zs, c0, c1, o0, o1, o2, d0, d1, d2,
                      tn, tf, slope, tbuf, dbuf):
    # branchless pass so the compiler can vectorize the cone test
    for j in range(c1 - c0):
        i = c0 + j
        px0 = xs[i] - o0
        px1 = ys[i] - o1
        px2 = zs[i] - o2
        t = px0 * d0 + px1 * d1 + px2 * d2
        e0 = px0 - t * d0
        e1 = px1 - t * d1
        e2 = px2 - t * d2
        dist2 = e0 * e0 + e1 * e1 + e2 * e2
        r = t * slope
        ok = (t >= tn) and (t <= tf) and (dist2 <= r * r)
        tbuf[j] = t
        dbuf[j] = dist2 if ok else -1.0


@njit(**_JIT)
def brute_query_batch(xs, ys, zs, dirs, origin, t_near, t_far, slopes):
    """Cone-test every point against every ray (chunked for vectorization)."""
    n = xs.shape[0]
    m = dirs.shape[0]
    offsets = np.zeros(m + 1, np.int64)
    CH = 2048
    tbuf = np.empty(CH, np.float64)
    dbuf = np.empty(CH, np.float64)
    sc_i = np.empty(max(n, 1), np.int64)
    sc_t = np.empty(max(n, 1), np.float64)
    sc_d = np.empty(max(n, 1), np.float64)
    out_i = np.empty(1024, np.int64)
    out_t = np.empty(1024, np.float64)
    out_d = np.empty(1024, np.float64)
    k = 0
    o0, o1, o2 = origin[0], origin[1], origin[2]
    for ri in range(m):
        d0 = dirs[ri, 0]
        d1 = dirs[ri, 1]
        d2 = dirs[ri, 2]
        tn = t_near[ri]
        tf = t_far[ri]
        slope = slopes[ri]
        kr = 0
        for c0 in range(0, n, CH):
            c1 = min(c0 + CH, n)
            _brute_scan_chunk(xs, ys, zs, c0, c1, o0, o1, o2,
                              d0, d1, d2, tn, tf, slope, tbuf, dbuf)
            for j in range(c1 - c0):
                if dbuf[j] >= 0.0:
                    sc_i[kr] = c0 + j
                    sc_t[kr] = tbuf[j]
                    sc_d[kr] = np.sqrt(dbuf[j])
                    kr += 1
        _canonical_sort(sc_i, sc_t, sc_d, kr)
        if k + kr > out_i.shape[0]:
            cap = max(2 * out_i.shape[0], k + kr)
            tmp = np.empty(cap, np.int64)
            tmp[:k] = out_i[:k]
            out_i = tmp
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_t[:k]
            out_t = tmpf
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_d[:k]
            out_d = tmpf
        out_i[k:k + kr] = sc_i[:kr]
        out_t[k:k + kr] = sc_t[:kr]
        out_d[k:k + kr] = sc_d[:kr]
        k += kr
        offsets[ri + 1] = k
    return offsets, out_i[:k].copy(), out_t[:k].copy(), out_d[:k].copy()


@njit(**_JIT)
def brute_restricted_batch(xs, ys, zs, pt_ok, pt_u, pt_v, pad,
                           px_u, px_v, dirs, origin, t_near, t_far, slopes):
    """Brute-force cone test restricted to each ray's s*s kernel footprint.

    ``pt_u``/``pt_v`` are padded pixel coordinates of each point's projection
    and ``pt_ok`` marks points rasterized inside the padded bounds.
    """
    n = xs.shape[0]
    m = dirs.shape[0]
    offsets = np.zeros(m + 1, np.int64)
    sc_i = np.empty(max(n, 1), np.int64)
    sc_t = np.empty(max(n, 1), np.float64)
    sc_d = np.empty(max(n, 1), np.float64)
    out_i = np.empty(1024, np.int64)
    out_t = np.empty(1024, np.float64)
    out_d = np.empty(1024, np.float64)
    k = 0
    o0, o1, o2 = origin[0], origin[1], origin[2]
    for ri in range(m):
        d0 = dirs[ri, 0]
        d1 = dirs[ri, 1]
        d2 = dirs[ri, 2]
        tn = t_near[ri]
        tf = t_far[ri]
        slope = slopes[ri]
        cu = px_u[ri] + pad
        cv = px_v[ri] + pad
        kr = 0
        for i in range(n):
            if not pt_ok[i]:
                continue
            du = pt_u[i] - cu
            dv = pt_v[i] - cv
            if du < -pad or du > pad or dv < -pad or dv > pad:
                continue
            ok, t, dist2 = _cone_test(
                xs[i] - o0, ys[i] - o1, zs[i] - o2, d0, d1, d2, tn, tf, slope)
            if ok:
                sc_i[kr] = i
                sc_t[kr] = t
                sc_d[kr] = np.sqrt(dist2)
                kr += 1
        _canonical_sort(sc_i, sc_t, sc_d, kr)
        if k + kr > out_i.shape[0]:
            cap = max(2 * out_i.shape[0], k + kr)
            tmp = np.empty(cap, np.int64)
            tmp[:k] = out_i[:k]
            out_i = tmp
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_t[:k]
            out_t = tmpf
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_d[:k]
            out_d = tmpf
        out_i[k:k + kr] = sc_i[:kr]
        out_t[k:k + kr] = sc_t[:kr]
        out_d[k:k + kr] = sc_d[:kr]
        k += kr
        offsets[ri + 1] = k
    return offsets, out_i[:k].copy(), out_t[:k].copy(), out_d[:k].copy()


@njit(**_JIT)
def grid_query_batch(cell_bounds, slot_x, slot_y, slot_z, slot_ids,
                     gx, gy, gz, bmin, cell,
                     dirs, origin, t_near, t_far, slopes):
    """Walk the grid along each ray and cone-test cells near the center line.

    The walk is a 3D digital differential analyzer over the ray segment
    clipped to the grid box expanded by the ray's maximum radius; every
    visited line cell is expanded by ``ceil(r_max / cell)`` in each axis.
    Returns CSR results plus per-ray visited-cell and scanned-point counters.
    """
    m = dirs.shape[0]
    n = slot_ids.shape[0]
    ncells = gx * gy * gz
    stamps = np.full(ncells, -1, np.int64)
    offsets = np.zeros(m + 1, np.int64)
    cells_visited = np.zeros(m, np.int64)
    scanned = np.zeros(m, np.int64)
    sc_i = np.empty(max(n, 1), np.int64)
    sc_t = np.empty(max(n, 1), np.float64)
    sc_d = np.empty(max(n, 1), np.float64)
    out_i = np.empty(1024, np.int64)
    out_t = np.empty(1024, np.float64)
    out_d = np.empty(1024, np.float64)
    k = 0
    o0, o1, o2 = origin[0], origin[1], origin[2]
    for ri in range(m):
        d0 = dirs[ri, 0]
        d1 = dirs[ri, 1]
        d2 = dirs[ri, 2]
        tn = t_near[ri]
        tf = t_far[ri]
        slope = slopes[ri]
        rmax = slope * tf
        kr = 0
        # clip the segment against the expanded grid box
        t0 = tn
        t1 = tf
        hit = True
        for a in range(3):
            da = dirs[ri, a]
            oa = origin[a]
            ga = gx if a == 0 else (gy if a == 1 else gz)
            lo_a = bmin[a] - rmax
            hi_a = bmin[a] + ga * cell + rmax
            if da == 0.0:
                if oa < lo_a or oa > hi_a:
                    hit = False
                    break
            else:
                inv = 1.0 / da
                ta = (lo_a - oa) * inv
                tb = (hi_a - oa) * inv
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
                if t0 > t1:
                    hit = False
                    break
        if hit:
            cexp = np.int64(np.ceil(rmax / cell))
            p0x = o0 + t0 * d0
            p0y = o1 + t0 * d1
            p0z = o2 + t0 * d2
            cx = np.int64(np.floor((p0x - bmin[0]) / cell))
            cy = np.int64(np.floor((p0y - bmin[1]) / cell))
            cz = np.int64(np.floor((p0z - bmin[2]) / cell))
            if d0 > 0.0:
                sx, tmx, tdx = 1, t0 + ((cx + 1) * cell + bmin[0] - p0x) / d0, cell / d0
            elif d0 < 0.0:
                sx, tmx, tdx = -1, t0 + (cx * cell + bmin[0] - p0x) / d0, -cell / d0
            else:
                sx, tmx, tdx = 0, np.inf, np.inf
            if d1 > 0.0:
                sy, tmy, tdy = 1, t0 + ((cy + 1) * cell + bmin[1] - p0y) / d1, cell / d1
            elif d1 < 0.0:
                sy, tmy, tdy = -1, t0 + (cy * cell + bmin[1] - p0y) / d1, -cell / d1
            else:
                sy, tmy, tdy = 0, np.inf, np.inf
            if d2 > 0.0:
                sz, tmz, tdz = 1, t0 + ((cz + 1) * cell + bmin[2] - p0z) / d2, cell / d2
            elif d2 < 0.0:
                sz, tmz, tdz = -1, t0 + (cz * cell + bmin[2] - p0z) / d2, -cell / d2
            else:
                sz, tmz, tdz = 0, np.inf, np.inf
            max_steps = gx + gy + gz + 6 * cexp + 12
            for _ in range(max_steps):
                x0 = max(cx - cexp, 0)
                x1 = min(cx + cexp, gx - 1)
                y0 = max(cy - cexp, 0)
                y1 = min(cy + cexp, gy - 1)
                z0 = max(cz - cexp, 0)
                z1 = min(cz + cexp, gz - 1)
                for ox in range(x0, x1 + 1):
                    for oy in range(y0, y1 + 1):
                        base = (ox * gy + oy) * gz
                        for oz in range(z0, z1 + 1):
                            lin = base + oz
                            if stamps[lin] == ri:
                                continue
                            stamps[lin] = ri
                            cells_visited[ri] += 1
                            c0 = cell_bounds[lin]
                            c1 = cell_bounds[lin + 1]
                            scanned[ri] += c1 - c0
                            for s in range(c0, c1):
                                ok, t, dist2 = _cone_test(
                                    slot_x[s] - o0, slot_y[s] - o1, slot_z[s] - o2,
                                    d0, d1, d2, tn, tf, slope)
                                if ok:
                                    sc_i[kr] = slot_ids[s]
                                    sc_t[kr] = t
                                    sc_d[kr] = np.sqrt(dist2)
                                    kr += 1
                if tmx <= tmy and tmx <= tmz:
                    if tmx > t1:
                        break
                    cx += sx
                    tmx += tdx
                elif tmy <= tmz:
                    if tmy > t1:
                        break
                    cy += sy
                    tmy += tdy
                else:
                    if tmz > t1:
                        break
                    cz += sz
                    tmz += tdz
        _canonical_sort(sc_i, sc_t, sc_d, kr)
        if k + kr > out_i.shape[0]:
            cap = max(2 * out_i.shape[0], k + kr)
            tmp = np.empty(cap, np.int64)
            tmp[:k] = out_i[:k]
            out_i = tmp
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_t[:k]
            out_t = tmpf
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_d[:k]
            out_d = tmpf
        out_i[k:k + kr] = sc_i[:kr]
        out_t[k:k + kr] = sc_t[:kr]
        out_d[k:k + kr] = sc_d[:kr]
        k += kr
        offsets[ri + 1] = k
    return offsets, out_i[:k].copy(), out_t[:k].copy(), out_d[:k].copy(), cells_visited, scanned


@njit(**_JIT)
def tree_query_batch(node_lo, node_hi, node_a, node_b, node_leaf,
                     slot_x, slot_y, slot_z, slot_ids,
                     dirs, origin, t_near, t_far, slopes):
    """Depth-first traversal pruning by segment-vs-expanded-box overlap.

    Leaf nodes carry ``(slot start, count)`` in ``node_a``/``node_b``;
    internal nodes carry ``(first child, child count)`` with children stored
    contiguously.  Returns CSR results plus per-ray visited-node counters.
    """
    m = dirs.shape[0]
    n = slot_ids.shape[0]
    offsets = np.zeros(m + 1, np.int64)
    visited = np.zeros(m, np.int64)
    sc_i = np.empty(max(n, 1), np.int64)
    sc_t = np.empty(max(n, 1), np.float64)
    sc_d = np.empty(max(n, 1), np.float64)
    out_i = np.empty(1024, np.int64)
    out_t = np.empty(1024, np.float64)
    out_d = np.empty(1024, np.float64)
    k = 0
    stack = np.empty(1024, np.int64)
    o0, o1, o2 = origin[0], origin[1], origin[2]
    for ri in range(m):
        d0 = dirs[ri, 0]
        d1 = dirs[ri, 1]
        d2 = dirs[ri, 2]
        tn = t_near[ri]
        tf = t_far[ri]
        slope = slopes[ri]
        rmax = slope * tf
        kr = 0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            ni = stack[sp]
            visited[ri] += 1
            t0 = tn
            t1 = tf
            hit = True
            for a in range(3):
                da = dirs[ri, a]
                oa = origin[a]
                lo_a = node_lo[ni, a] - rmax
                hi_a = node_hi[ni, a] + rmax
                if da == 0.0:
                    if oa < lo_a or oa > hi_a:
                        hit = False
                        break
                else:
                    inv = 1.0 / da
                    ta = (lo_a - oa) * inv
                    tb = (hi_a - oa) * inv
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
                    if t0 > t1:
                        hit = False
                        break
            if not hit:
                continue
            if node_leaf[ni]:
                s0 = node_a[ni]
                for s in range(s0, s0 + node_b[ni]):
                    ok, t, dist2 = _cone_test(
                        slot_x[s] - o0, slot_y[s] - o1, slot_z[s] - o2,
                        d0, d1, d2, tn, tf, slope)
                    if ok:
                        sc_i[kr] = slot_ids[s]
                        sc_t[kr] = t
                        sc_d[kr] = np.sqrt(dist2)
                        kr += 1
            else:
                first = node_a[ni]
                for c in range(node_b[ni]):
                    stack[sp] = first + c
                    sp += 1
        _canonical_sort(sc_i, sc_t, sc_d, kr)
        if k + kr > out_i.shape[0]:
            cap = max(2 * out_i.shape[0], k + kr)
            tmp = np.empty(cap, np.int64)
            tmp[:k] = out_i[:k]
            out_i = tmp
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_t[:k]
            out_t = tmpf
            tmpf = np.empty(cap, np.float64)
            tmpf[:k] = out_d[:k]
            out_d = tmpf
        out_i[k:k + kr] = sc_i[:kr]
        out_t[k:k + kr] = sc_t[:kr]
        out_d[k:k + kr] = sc_d[:kr]
        k += kr
        offsets[ri + 1] = k
    return offsets, out_i[:k].copy(), out_t[:k].copy(), out_d[:k].copy(), visited


@njit(**_JIT)
def sample_batch(offsets, ids, ts, ds, slopes, k_neighbors, beta2, gamma,
                 eps_mode, eps, tau_min, colors, want_color):
    """Full per-ray sampling pipeline over CSR query results.

    For each candidate (one per retrieved point, already t-sorted): mean
    distance to its nearest retrieved points, confidence, occlusion-aware
    weight, then retention.  Candidate-to-point distances decompose along and
    across the ray: |x_i - (o + t_j d)|^2 = (t_i - t_j)^2 + dist_perp_i^2.
    Returns retained candidates as CSR plus the per-ray final transmittance.
    """
    m = offsets.shape[0] - 1
    total = ids.shape[0]
    K = k_neighbors
    r_off = np.zeros(m + 1, np.int64)
    r_id = np.empty(total, np.int64)
    r_t = np.empty(total, np.float64)
    r_dist = np.empty(total, np.float64)
    r_d = np.empty(total, np.float64)
    r_alpha = np.empty(total, np.float64)
    r_w = np.empty(total, np.float64)
    r_color = np.empty((total if want_color else 0, 3), np.float64)
    t_end = np.ones(m, np.float64)
    best_d2 = np.empty(K, np.float64)
    best_i = np.empty(K, np.int64)
    maxq = 0
    for ri in range(m):
        q = offsets[ri + 1] - offsets[ri]
        if q > maxq:
            maxq = q
    cd = np.empty(max(maxq, 1), np.float64)
    ca = np.empty(max(maxq, 1), np.float64)
    cw = np.empty(max(maxq, 1), np.float64)
    ccol = np.empty((max(maxq, 1) if want_color else 0, 3), np.float64)
    k_out = 0
    for ri in range(m):
        lo = offsets[ri]
        q = offsets[ri + 1] - lo
        if q == 0:
            r_off[ri + 1] = k_out
            continue
        slope = slopes[ri]
        for j in range(q):
            tj = ts[lo + j]
            rj = slope * tj
            n_el = 0
            for i in range(q):
                if ds[lo + i] <= rj:
                    n_el += 1
            use_el = n_el >= K
            pool = n_el if use_el else q
            ksel = K if pool > K else pool
            for b in range(ksel):
                best_d2[b] = np.inf
                best_i[b] = -1
            for i in range(q):
                di = ds[lo + i]
                if use_el and di > rj:
                    continue
                dt = ts[lo + i] - tj
                d2 = dt * dt + di * di
                if d2 < best_d2[ksel - 1]:
                    b = ksel - 1
                    while b > 0 and best_d2[b - 1] > d2:
                        best_d2[b] = best_d2[b - 1]
                        best_i[b] = best_i[b - 1]
                        b -= 1
                    best_d2[b] = d2
                    best_i[b] = i
            acc = 0.0
            for b in range(ksel):
                acc += np.sqrt(best_d2[b])
            dj = acc / ksel
            cd[j] = dj
            ca[j] = gamma * np.exp(-(dj * dj) / beta2)
            if want_color:
                # inverse-distance blend; coincident points share weight 1
                nz = 0
                for b in range(ksel):
                    if best_d2[b] == 0.0:
                        nz += 1
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                if nz > 0:
                    for b in range(ksel):
                        if best_d2[b] == 0.0:
                            pid = ids[lo + best_i[b]]
                            c0 += colors[pid, 0]
                            c1 += colors[pid, 1]
                            c2 += colors[pid, 2]
                    c0 /= nz
                    c1 /= nz
                    c2 /= nz
                else:
                    wsum = 0.0
                    for b in range(ksel):
                        wgt = 1.0 / np.sqrt(best_d2[b])
                        pid = ids[lo + best_i[b]]
                        c0 += wgt * colors[pid, 0]
                        c1 += wgt * colors[pid, 1]
                        c2 += wgt * colors[pid, 2]
                        wsum += wgt
                    c0 /= wsum
                    c1 /= wsum
                    c2 /= wsum
                ccol[j, 0] = c0
                ccol[j, 1] = c1
                ccol[j, 2] = c2
        T = 1.0
        for j in range(q):
            cw[j] = ca[j] * T
            T *= 1.0 - ca[j]
        t_end[ri] = T
        if eps_mode:
            for j in range(q):
                if cw[j] >= eps:
                    r_id[k_out] = ids[lo + j]
                    r_t[k_out] = ts[lo + j]
                    r_dist[k_out] = ds[lo + j]
                    r_d[k_out] = cd[j]
                    r_alpha[k_out] = ca[j]
                    r_w[k_out] = cw[j]
                    if want_color:
                        r_color[k_out, 0] = ccol[j, 0]
                        r_color[k_out, 1] = ccol[j, 1]
                        r_color[k_out, 2] = ccol[j, 2]
                    k_out += 1
        else:
            T2 = 1.0
            for j in range(q):
                if T2 < tau_min:
                    break
                r_id[k_out] = ids[lo + j]
                r_t[k_out] = ts[lo + j]
                r_dist[k_out] = ds[lo + j]
                r_d[k_out] = cd[j]
                r_alpha[k_out] = ca[j]
                r_w[k_out] = cw[j]
                if want_color:
                    r_color[k_out, 0] = ccol[j, 0]
                    r_color[k_out, 1] = ccol[j, 1]
                    r_color[k_out, 2] = ccol[j, 2]
                k_out += 1
                T2 *= 1.0 - ca[j]
        r_off[ri + 1] = k_out
    return (r_off, r_id[:k_out].copy(), r_t[:k_out].copy(), r_dist[:k_out].copy(),
            r_d[:k_out].copy(), r_alpha[:k_out].copy(), r_w[:k_out].copy(),
            r_color[:k_out].copy() if want_color else r_color, t_end)
