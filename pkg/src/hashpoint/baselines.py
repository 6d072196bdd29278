"""Reference search structures answering the same per-ray cone query.

Brute force is the ground truth; the uniform grid (3DDA traversal), k-d tree
and octree (segment-vs-expanded-AABB pruning) serve as correctness oracles
and benchmark opponents.  All structures emit the shared QueryResult
contract and evaluate the identical cone test, so result sets agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cloud import PointCloud
from .geometry import Camera, Ray, SearchConfig, radius_slope
from .hash_index import QueryResult, rasterize_points

__all__ = [
    "UniformGrid",
    "KdTree",
    "Octree",
    "build_grid",
    "build_kdtree",
    "build_octree",
    "brute_force_query",
    "grid_query",
    "kdtree_query",
    "octree_query",
]

GRID_TARGET_OCCUPANCY = 8.0
GRID_MAX_CELLS_PER_AXIS = 512
KDTREE_LEAF_SIZE = 16
OCTREE_LEAF_CAPACITY = 16
OCTREE_MAX_DEPTH = 12


def _soa(positions: np.ndarray, order: np.ndarray | None = None):
    pos = positions if order is None else positions[order]
    return (np.ascontiguousarray(pos[:, 0]),
            np.ascontiguousarray(pos[:, 1]),
            np.ascontiguousarray(pos[:, 2]))


def _ray_arrays(ray: Ray):
    dirs = ray.direction.reshape(1, 3)
    return (dirs, ray.origin, np.array([ray.t_near]), np.array([ray.t_far]))


@dataclass(frozen=True)
class UniformGrid:
    """Cubic-cell grid over the cloud's bounding box with CSR point lists."""

    points: PointCloud
    bbox_min: np.ndarray
    cell_size: float
    dims: tuple[int, int, int]
    cell_bounds: np.ndarray
    slot_ids: np.ndarray
    slot_x: np.ndarray
    slot_y: np.ndarray
    slot_z: np.ndarray


def build_grid(points: PointCloud, target_occupancy: float = GRID_TARGET_OCCUPANCY,
               max_cells_per_axis: int = GRID_MAX_CELLS_PER_AXIS) -> UniformGrid:
    """Grid sized for roughly ``target_occupancy`` points per cell."""
    pos = points.positions
    n = points.count
    if n == 0:
        bmin = np.zeros(3)
        cell = 1.0
        dims = (1, 1, 1)
        lin = np.empty(0, np.int64)
    else:
        bmin = pos.min(axis=0)
        ext = pos.max(axis=0) - bmin
        nonzero = ext[ext > 0]
        if nonzero.size == 0:
            cell = 1.0
        else:
            target_cells = max(1.0, n / target_occupancy)
            cell = float(np.prod(nonzero) / target_cells) ** (1.0 / nonzero.size)
            cell = max(cell, float(ext.max()) / max_cells_per_axis)
        dims = tuple(int(x) for x in
                     np.clip(np.ceil(ext / cell), 1, max_cells_per_axis).astype(np.int64))
        idx = np.floor((pos - bmin) / cell).astype(np.int64)
        idx = np.clip(idx, 0, np.array(dims, np.int64) - 1)  # upper-boundary points
        lin = (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2]
    ncells = dims[0] * dims[1] * dims[2]
    counts = np.bincount(lin, minlength=ncells).astype(np.int64)
    bounds = np.concatenate(([0], np.cumsum(counts)))
    cursor = bounds[:-1].copy()
    slot_ids = np.empty(n, np.int64)
    _kernels.scatter_by_bucket(lin, np.arange(n, dtype=np.int64), cursor, slot_ids)
    sx, sy, sz = _soa(pos, slot_ids)
    return UniformGrid(points=points, bbox_min=bmin, cell_size=cell, dims=dims,
                       cell_bounds=bounds, slot_ids=slot_ids,
                       slot_x=sx, slot_y=sy, slot_z=sz)


def grid_query_batch_arrays(grid: UniformGrid, dirs, origin, t_near, t_far, slopes):
    return _kernels.grid_query_batch(
        grid.cell_bounds, grid.slot_x, grid.slot_y, grid.slot_z, grid.slot_ids,
        grid.dims[0], grid.dims[1], grid.dims[2], grid.bbox_min, grid.cell_size,
        dirs, origin, t_near, t_far, slopes)


def grid_query(grid: UniformGrid, ray: Ray, camera: Camera,
               config: SearchConfig) -> QueryResult:
    """Cone query via 3DDA traversal with conservative neighborhood expansion."""
    slope = radius_slope(camera, ray.pixel, config.kernel_radius, config.use_approx_radius)
    dirs, origin, tn, tf = _ray_arrays(ray)
    offsets, ids, t, dist, _, _ = grid_query_batch_arrays(
        grid, dirs, origin, tn, tf, np.array([slope]))
    return QueryResult(ids, t, dist)


class _FlatTree:
    """Array-of-nodes tree shared by the k-d tree and octree builders."""

    def __init__(self):
        self.lo: list[np.ndarray] = []
        self.hi: list[np.ndarray] = []
        self.a: list[int] = []
        self.b: list[int] = []
        self.leaf: list[int] = []

    def new_node(self) -> int:
        self.lo.append(np.zeros(3))
        self.hi.append(np.zeros(3))
        self.a.append(0)
        self.b.append(0)
        self.leaf.append(1)
        return len(self.a) - 1

    def finalize(self):
        return (np.ascontiguousarray(np.stack(self.lo)),
                np.ascontiguousarray(np.stack(self.hi)),
                np.asarray(self.a, np.int64),
                np.asarray(self.b, np.int64),
                np.asarray(self.leaf, np.uint8))


@dataclass(frozen=True)
class KdTree:
    """Median-split k-d tree with tight node boxes and leaf point ranges."""

    points: PointCloud
    leaf_size: int
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_a: np.ndarray
    node_b: np.ndarray
    node_leaf: np.ndarray
    slot_ids: np.ndarray
    slot_x: np.ndarray
    slot_y: np.ndarray
    slot_z: np.ndarray


def build_kdtree(points: PointCloud, leaf_size: int = KDTREE_LEAF_SIZE) -> KdTree:
    """Split on the widest axis at the median until leaves fit ``leaf_size``."""
    if leaf_size < 1:
        raise ValueError("leaf_size must be at least 1")
    pos = points.positions
    n = points.count
    order = np.arange(n, dtype=np.int64)
    tree = _FlatTree()
    stack = [(0, n, tree.new_node())]
    while stack:
        s, e, ni = stack.pop()
        sub = order[s:e]
        if e > s:
            tree.lo[ni] = pos[sub].min(axis=0)
            tree.hi[ni] = pos[sub].max(axis=0)
        if e - s <= leaf_size:
            tree.a[ni] = s
            tree.b[ni] = e - s
            tree.leaf[ni] = 1
            continue
        axis = int(np.argmax(tree.hi[ni] - tree.lo[ni]))
        mid = (e - s) // 2
        part = np.argpartition(pos[sub, axis], mid)
        order[s:e] = sub[part]
        left = tree.new_node()
        right = tree.new_node()
        tree.a[ni] = left
        tree.b[ni] = 2
        tree.leaf[ni] = 0
        stack.append((s, s + mid, left))
        stack.append((s + mid, e, right))
    lo, hi, a, b, leaf = tree.finalize()
    sx, sy, sz = _soa(pos, order)
    return KdTree(points=points, leaf_size=leaf_size, node_lo=lo, node_hi=hi,
                  node_a=a, node_b=b, node_leaf=leaf, slot_ids=order,
                  slot_x=sx, slot_y=sy, slot_z=sz)


@dataclass(frozen=True)
class Octree:
    """Recursive octant subdivision; children partition the parent box."""

    points: PointCloud
    leaf_capacity: int
    max_depth: int
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_a: np.ndarray
    node_b: np.ndarray
    node_leaf: np.ndarray
    slot_ids: np.ndarray
    slot_x: np.ndarray
    slot_y: np.ndarray
    slot_z: np.ndarray


def build_octree(points: PointCloud, leaf_capacity: int = OCTREE_LEAF_CAPACITY,
                 max_depth: int = OCTREE_MAX_DEPTH) -> Octree:
    """Subdivide octants until ``leaf_capacity`` or ``max_depth`` is reached."""
    if leaf_capacity < 1 or max_depth < 0:
        raise ValueError("need leaf_capacity >= 1 and max_depth >= 0")
    pos = points.positions
    n = points.count
    order = np.arange(n, dtype=np.int64)
    tree = _FlatTree()
    root = tree.new_node()
    root_lo = pos.min(axis=0) if n else np.zeros(3)
    root_hi = pos.max(axis=0) if n else np.zeros(3)
    stack = [(0, n, root, root_lo, root_hi, 0)]
    while stack:
        s, e, ni, lo, hi, depth = stack.pop()
        tree.lo[ni] = lo
        tree.hi[ni] = hi
        if e - s <= leaf_capacity or depth >= max_depth:
            tree.a[ni] = s
            tree.b[ni] = e - s
            tree.leaf[ni] = 1
            continue
        center = 0.5 * (lo + hi)
        sub = order[s:e]
        p = pos[sub]
        code = ((p[:, 0] >= center[0]).astype(np.int64)
                | ((p[:, 1] >= center[1]).astype(np.int64) << 1)
                | ((p[:, 2] >= center[2]).astype(np.int64) << 2))
        counts = np.bincount(code, minlength=8)
        order[s:e] = sub[np.argsort(code, kind="stable")]
        first_child = -1
        n_children = 0
        off = s
        for c in range(8):
            cnt = int(counts[c])
            if cnt == 0:
                continue
            clo = np.where([c & 1, c & 2, c & 4], center, lo)
            chi = np.where([c & 1, c & 2, c & 4], hi, center)
            child = tree.new_node()
            if first_child < 0:
                first_child = child
            n_children += 1
            stack.append((off, off + cnt, child, clo, chi, depth + 1))
            off += cnt
        tree.a[ni] = first_child
        tree.b[ni] = n_children
        tree.leaf[ni] = 0
    lo, hi, a, b, leaf = tree.finalize()
    sx, sy, sz = _soa(pos, order)
    return Octree(points=points, leaf_capacity=leaf_capacity, max_depth=max_depth,
                  node_lo=lo, node_hi=hi, node_a=a, node_b=b, node_leaf=leaf,
                  slot_ids=order, slot_x=sx, slot_y=sy, slot_z=sz)


def tree_query_batch_arrays(tree, dirs, origin, t_near, t_far, slopes):
    return _kernels.tree_query_batch(
        tree.node_lo, tree.node_hi, tree.node_a, tree.node_b, tree.node_leaf,
        tree.slot_x, tree.slot_y, tree.slot_z, tree.slot_ids,
        dirs, origin, t_near, t_far, slopes)


def _tree_query(tree, ray: Ray, camera: Camera, config: SearchConfig) -> QueryResult:
    slope = radius_slope(camera, ray.pixel, config.kernel_radius, config.use_approx_radius)
    dirs, origin, tn, tf = _ray_arrays(ray)
    offsets, ids, t, dist, _ = tree_query_batch_arrays(
        tree, dirs, origin, tn, tf, np.array([slope]))
    return QueryResult(ids, t, dist)


def kdtree_query(tree: KdTree, ray: Ray, camera: Camera,
                 config: SearchConfig) -> QueryResult:
    """Cone query pruned by segment-vs-expanded-box tests on the k-d tree."""
    return _tree_query(tree, ray, camera, config)


def octree_query(tree: Octree, ray: Ray, camera: Camera,
                 config: SearchConfig) -> QueryResult:
    """Cone query pruned by segment-vs-expanded-box tests on the octree."""
    return _tree_query(tree, ray, camera, config)


def brute_query_batch_arrays(points: PointCloud, dirs, origin, t_near, t_far, slopes):
    sx, sy, sz = _soa(points.positions)
    return _kernels.brute_query_batch(sx, sy, sz, dirs, origin, t_near, t_far, slopes)


def brute_restricted_batch_arrays(points: PointCloud, camera: Camera,
                                  config: SearchConfig, pixels, dirs,
                                  t_near, t_far, slopes):
    sx, sy, sz = _soa(points.positions)
    ok, pu, pv = rasterize_points(points.positions, camera, config.pad)
    pixels = np.ascontiguousarray(pixels, dtype=np.int64).reshape(-1, 2)
    return _kernels.brute_restricted_batch(
        sx, sy, sz, ok.astype(np.uint8), pu, pv, config.pad,
        np.ascontiguousarray(pixels[:, 0]), np.ascontiguousarray(pixels[:, 1]),
        dirs, camera.origin, t_near, t_far, slopes)


def brute_force_query(points: PointCloud, ray: Ray, camera: Camera,
                      config: SearchConfig, restrict_footprint: bool = False) -> QueryResult:
    """Ground-truth cone query over all points.

    With ``restrict_footprint=True`` only points whose projection falls in
    the ray's s*s padded kernel footprint qualify, matching the hash-index
    semantics at image borders; that mode requires rays cast from the camera
    origin.
    """
    slope = radius_slope(camera, ray.pixel, config.kernel_radius, config.use_approx_radius)
    slopes = np.array([slope])
    dirs, origin, tn, tf = _ray_arrays(ray)
    if restrict_footprint:
        if not np.array_equal(ray.origin, camera.origin):
            raise ValueError("footprint restriction requires rays from the camera origin")
        pixels = np.array([ray.pixel], np.int64)
        offsets, ids, t, dist = brute_restricted_batch_arrays(
            points, camera, config, pixels, dirs, tn, tf, slopes)
    else:
        offsets, ids, t, dist = brute_query_batch_arrays(
            points, dirs, ray.origin, tn, tf, slopes)
    return QueryResult(ids, t, dist)
