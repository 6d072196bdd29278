"""Rasterized hash index over a point cloud, with per-ray cone queries.

Build projects every point onto the image plane and groups points by the
pixel their projection falls in, over a padded pixel grid so border rays
keep full search kernels.  The point list is reordered so that pixels appear
in Z-order (Morton order of padded coordinates) and each pixel's points form
one contiguous slot range; the table maps a pixel to its (start, count).
Construction is a counting sort: one projection pass, one counting pass and
one scatter pass over the points.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cloud import PointCloud
from .geometry import Camera, Ray, SearchConfig, radius_slopes

__all__ = [
    "QueryResult",
    "HashIndex",
    "build",
    "query",
    "query_batch",
    "query_batch_arrays",
    "results_from_csr",
    "write_stats_csv",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class QueryResult:
    """One ray's neighbors: point ids with projection parameter and distance.

    Entries are sorted by ``t_proj`` ascending (ties by id) and ids are
    unique; ``dist_perp`` is the perpendicular distance to the ray.
    """

    point_ids: np.ndarray
    t_proj: np.ndarray
    dist_perp: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.point_ids, dtype=np.int64)
        t = np.ascontiguousarray(self.t_proj, dtype=np.float64)
        d = np.ascontiguousarray(self.dist_perp, dtype=np.float64)
        if not (ids.shape == t.shape == d.shape) or ids.ndim != 1:
            raise ValueError("point_ids, t_proj, dist_perp must be equal-length 1-D arrays")
        object.__setattr__(self, "point_ids", _freeze(ids))
        object.__setattr__(self, "t_proj", _freeze(t))
        object.__setattr__(self, "dist_perp", _freeze(d))

    def __len__(self) -> int:
        return self.point_ids.shape[0]

    @classmethod
    def empty(cls) -> "QueryResult":
        return cls(np.empty(0, np.int64), np.empty(0), np.empty(0))


def results_from_csr(offsets, ids, t, dist) -> list[QueryResult]:
    """Split flat CSR query output into per-ray :class:`QueryResult` objects."""
    return [
        QueryResult(ids[offsets[i]:offsets[i + 1]],
                    t[offsets[i]:offsets[i + 1]],
                    dist[offsets[i]:offsets[i + 1]])
        for i in range(offsets.shape[0] - 1)
    ]


def _part1by1(n: np.ndarray) -> np.ndarray:
    n = n.astype(np.uint64)
    n = (n ^ (n << 8)) & np.uint64(0x00FF00FF)
    n = (n ^ (n << 4)) & np.uint64(0x0F0F0F0F)
    n = (n ^ (n << 2)) & np.uint64(0x33333333)
    n = (n ^ (n << 1)) & np.uint64(0x55555555)
    return n


def morton_codes(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Interleaved-bit Z-order code of 16-bit (u, v) pixel coordinates."""
    return (_part1by1(u) | (_part1by1(v) << np.uint64(1))).astype(np.int64)


def rasterize_points(positions: np.ndarray, camera: Camera, pad: int):
    """Padded pixel of each point's projection.

    Returns ``(ok, pu, pv)``: ``ok`` marks points in front of the camera whose
    projection falls inside the padded bounds, and ``pu``/``pv`` are padded
    pixel coordinates (valid only where ``ok``).  This is the single source
    of rasterization arithmetic shared by the index build and the
    footprint-restricted oracle.
    """
    wp = camera.width + 2 * pad
    hp = camera.height + 2 * pad
    u, v, depth = camera.project(positions)
    fu = np.floor(u) + pad
    fv = np.floor(v) + pad
    ok = (depth > 0) & (fu >= 0) & (fu < wp) & (fv >= 0) & (fv < hp)
    pu = np.where(ok, fu, 0).astype(np.int64)
    pv = np.where(ok, fv, 0).astype(np.int64)
    return ok, pu, pv


@dataclass(frozen=True)
class HashIndex:
    """Immutable search index: reordered point list plus pixel lookup table.

    ``table_start``/``table_count`` are indexed row-major over the padded
    pixel grid; slot arrays hold the reordered coordinates so kernel scans
    stream contiguous memory.  ``point_touches`` counts per-point visits made
    by the three build passes.
    """

    points: PointCloud
    camera: Camera
    config: SearchConfig
    pad: int
    table_start: np.ndarray
    table_count: np.ndarray
    reordered_ids: np.ndarray
    slot_x: np.ndarray
    slot_y: np.ndarray
    slot_z: np.ndarray
    point_touches: int

    @property
    def padded_width(self) -> int:
        return self.camera.width + 2 * self.pad

    @property
    def padded_height(self) -> int:
        return self.camera.height + 2 * self.pad

    @property
    def indexed_count(self) -> int:
        """Number of points rasterized into the table."""
        return self.reordered_ids.shape[0]


def build(points: PointCloud, camera: Camera, config: SearchConfig) -> HashIndex:
    """Rasterize ``points`` for ``camera`` and build the lookup table.

    Points behind the camera or projecting outside the padded bounds are
    excluded.  Deterministic: pixels ordered by Morton code, points within a
    pixel by ascending original index.
    """
    pad = config.pad
    wp = camera.width + 2 * pad
    hp = camera.height + 2 * pad
    if max(wp, hp) > 0xFFFF:
        raise ValueError("padded image exceeds 16-bit pixel coordinates")
    n = points.count
    ok, pu, pv = rasterize_points(points.positions, camera, pad)       # pass 1
    valid = np.flatnonzero(ok).astype(np.int64)
    lin = pv[valid] * wp + pu[valid]
    counts = np.bincount(lin, minlength=wp * hp).astype(np.int64)      # pass 2
    grid_u = np.tile(np.arange(wp, dtype=np.uint64), hp)
    grid_v = np.repeat(np.arange(hp, dtype=np.uint64), wp)
    z_order = np.argsort(morton_codes(grid_u, grid_v), kind="stable")
    starts = np.zeros(wp * hp, np.int64)
    starts[z_order] = np.concatenate(([0], np.cumsum(counts[z_order])))[:-1]
    cursor = starts.copy()
    slot_ids = np.empty(valid.shape[0], np.int64)
    _kernels.scatter_by_bucket(lin, valid, cursor, slot_ids)           # pass 3
    starts[counts == 0] = 0
    pos = points.positions
    return HashIndex(
        points=points,
        camera=camera,
        config=config,
        pad=pad,
        table_start=_freeze(starts),
        table_count=_freeze(counts),
        reordered_ids=_freeze(slot_ids),
        slot_x=_freeze(np.ascontiguousarray(pos[slot_ids, 0])),
        slot_y=_freeze(np.ascontiguousarray(pos[slot_ids, 1])),
        slot_z=_freeze(np.ascontiguousarray(pos[slot_ids, 2])),
        point_touches=n + 2 * valid.shape[0],
    )


def _check_config(index: HashIndex, config: SearchConfig | None) -> SearchConfig:
    if config is None:
        return index.config
    if config.kernel_size != index.config.kernel_size:
        raise ValueError(
            f"config kernel size {config.kernel_size} does not match the "
            f"index padding (built with {index.config.kernel_size})")
    return config


def _check_rays(index: HashIndex, pixels: np.ndarray, origin: np.ndarray) -> None:
    cam = index.camera
    if not np.array_equal(origin, cam.origin):
        raise ValueError("ray origin differs from the index camera origin")
    if pixels.size and (pixels[:, 0].min() < 0 or pixels[:, 0].max() >= cam.width
                        or pixels[:, 1].min() < 0 or pixels[:, 1].max() >= cam.height):
        raise ValueError("ray pixel outside the index camera image")


def query_batch_arrays(index: HashIndex, pixels: np.ndarray, dirs: np.ndarray,
                       t_near: np.ndarray, t_far: np.ndarray,
                       config: SearchConfig | None = None):
    """Array-level batch query.

    Returns ``(offsets, ids, t_proj, dist_perp, probes, scanned)``: CSR
    results in ray order plus per-ray counts of table probes (always the full
    kernel, s²) and of point slots scanned.
    """
    config = _check_config(index, config)
    pixels = np.ascontiguousarray(pixels, dtype=np.int64).reshape(-1, 2)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    _check_rays(index, pixels, index.camera.origin)
    slopes = radius_slopes(index.camera, pixels, config.kernel_radius,
                           config.use_approx_radius)
    return _kernels.hash_query_batch(
        index.table_start, index.table_count,
        index.slot_x, index.slot_y, index.slot_z, index.reordered_ids,
        index.padded_width, index.pad,
        np.ascontiguousarray(pixels[:, 0]), np.ascontiguousarray(pixels[:, 1]),
        dirs, index.camera.origin,
        np.ascontiguousarray(t_near, dtype=np.float64),
        np.ascontiguousarray(t_far, dtype=np.float64),
        np.ascontiguousarray(slopes, dtype=np.float64))


def _pack_rays(rays: list[Ray]):
    m = len(rays)
    pixels = np.empty((m, 2), np.int64)
    dirs = np.empty((m, 3), np.float64)
    t_near = np.empty(m, np.float64)
    t_far = np.empty(m, np.float64)
    for i, ray in enumerate(rays):
        pixels[i] = ray.pixel
        dirs[i] = ray.direction
        t_near[i] = ray.t_near
        t_far[i] = ray.t_far
    return pixels, dirs, t_near, t_far


def query(index: HashIndex, ray: Ray, config: SearchConfig | None = None) -> QueryResult:
    """Neighbors of one ray: points inside the ray's search kernel that pass
    the adaptive cone test, sorted by projection parameter."""
    if not np.array_equal(ray.origin, index.camera.origin):
        raise ValueError("ray origin differs from the index camera origin")
    pixels, dirs, t_near, t_far = _pack_rays([ray])
    offsets, ids, t, dist, _, _ = query_batch_arrays(
        index, pixels, dirs, t_near, t_far, config)
    return QueryResult(ids, t, dist)


def query_batch(index: HashIndex, rays: list[Ray], config: SearchConfig | None = None,
                parallel: bool = False) -> list[QueryResult]:
    """Element-wise :func:`query` over ``rays``, in input order.

    With ``parallel=True`` the batch is split over worker threads (the kernel
    releases the GIL); ``HASHPOINT_THREADS`` caps the worker count.  Results
    are identical to the sequential path.
    """
    for ray in rays:
        if not np.array_equal(ray.origin, index.camera.origin):
            raise ValueError("ray origin differs from the index camera origin")
    pixels, dirs, t_near, t_far = _pack_rays(rays)
    threads = _thread_count() if parallel else 1
    if threads <= 1 or len(rays) < 2 * threads:
        offsets, ids, t, dist, _, _ = query_batch_arrays(
            index, pixels, dirs, t_near, t_far, config)
        return results_from_csr(offsets, ids, t, dist)
    bounds = np.linspace(0, len(rays), threads + 1).astype(int)
    chunks = [(bounds[i], bounds[i + 1]) for i in range(threads) if bounds[i] < bounds[i + 1]]

    def run(chunk):
        lo, hi = chunk
        return query_batch_arrays(index, pixels[lo:hi], dirs[lo:hi],
                                  t_near[lo:hi], t_far[lo:hi], config)

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run, chunks))
    out: list[QueryResult] = []
    for offsets, ids, t, dist, _, _ in parts:
        out.extend(results_from_csr(offsets, ids, t, dist))
    return out


def _thread_count() -> int:
    env = os.environ.get("HASHPOINT_THREADS")
    limit = os.cpu_count() or 1
    if env:
        try:
            limit = max(1, min(limit, int(env)))
        except ValueError:
            pass
    return limit


def write_stats_csv(index: HashIndex, path) -> None:
    """Dump non-empty table entries as ``pixel_u,pixel_v,count`` rows.

    Coordinates are unpadded, so entries in the rasterization margin appear
    with negative or out-of-image coordinates.
    """
    wp = index.padded_width
    occupied = np.flatnonzero(index.table_count)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pixel_u,pixel_v,count\n")
        for lin in occupied:
            pu = int(lin % wp) - index.pad
            pv = int(lin // wp) - index.pad
            fh.write(f"{pu},{pv},{int(index.table_count[lin])}\n")
