"""Timing harness comparing the search structures on identical workloads.

Every structure answers the same rays over the same cloud; the harness
refuses to report timings unless all structures return identical result
sets, so the comparison measures search efficiency alone.  Timings are in
milliseconds, median over query repeats after a warmup pass.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import baselines, hash_index, sampler
from .cloud import PointCloud
from .geometry import Camera, SearchConfig, radius_slopes, ray_grid
from .sampler import SamplerConfig

__all__ = ["BenchRecord", "FairnessError", "STRUCTURES", "run_bench",
           "emit_csv", "read_csv"]

STRUCTURES = ("brute", "grid", "kdtree", "octree", "hashpoint")


class FairnessError(RuntimeError):
    """Raised when structures disagree on a workload's result set."""


@dataclass
class BenchRecord:
    """One structure's timings on one workload."""

    structure: str
    n: int
    m: int
    build_ms: float
    query_ms: float
    sample_ms: float
    q_total: int
    q_mean: float


class _Adapter:
    """Build/query hooks giving every structure the same timing surface."""

    def __init__(self, name, build, query):
        self.name = name
        self.build = build      # (cloud, camera, config) -> handle
        self.query = query      # (handle, pixels, dirs, t_near, t_far, slopes) -> CSR


def _adapters(camera: Camera):
    from . import _kernels
    origin = camera.origin

    def brute_query(soa, pixels, dirs, t_near, t_far, slopes):
        return _kernels.brute_query_batch(soa[0], soa[1], soa[2], dirs, origin,
                                          t_near, t_far, slopes)

    def grid_query(grid, pixels, dirs, t_near, t_far, slopes):
        return baselines.grid_query_batch_arrays(grid, dirs, origin,
                                                 t_near, t_far, slopes)[:4]

    def tree_query(tree, pixels, dirs, t_near, t_far, slopes):
        return baselines.tree_query_batch_arrays(tree, dirs, origin,
                                                 t_near, t_far, slopes)[:4]

    def hash_query(index, pixels, dirs, t_near, t_far, slopes):
        return hash_index.query_batch_arrays(index, pixels, dirs,
                                             t_near, t_far)[:4]

    return {
        "brute": _Adapter("brute",
                          lambda c, cam, cfg: baselines._soa(c.positions), brute_query),
        "grid": _Adapter("grid",
                         lambda c, cam, cfg: baselines.build_grid(c), grid_query),
        "kdtree": _Adapter("kdtree",
                           lambda c, cam, cfg: baselines.build_kdtree(c), tree_query),
        "octree": _Adapter("octree",
                           lambda c, cam, cfg: baselines.build_octree(c), tree_query),
        "hashpoint": _Adapter("hashpoint",
                              lambda c, cam, cfg: hash_index.build(c, cam, cfg), hash_query),
    }


_WARMED = False


def warm_kernels() -> None:
    """Compile and warm every query kernel on a tiny workload."""
    global _WARMED
    if _WARMED:
        return
    from .scenes import SceneSpec, generate_scene, scene_camera
    cloud = generate_scene(SceneSpec(kind="uniform_box", n=32, seed=0))
    camera = scene_camera(8, 8)
    config = SearchConfig.for_camera(camera)
    dirs, pixels = ray_grid(camera)
    t_near = np.full(len(dirs), 1.0)
    t_far = np.full(len(dirs), 10.0)
    slopes = radius_slopes(camera, pixels, config.kernel_radius)
    for adapter in _adapters(camera).values():
        handle = adapter.build(cloud, camera, config)
        out = adapter.query(handle, pixels, dirs, t_near, t_far, slopes)
    baselines.brute_restricted_batch_arrays(cloud, camera, config, pixels, dirs,
                                            t_near, t_far, slopes)
    sampler.sample_batch_arrays(*out, slopes, SamplerConfig(), cloud.colors)
    _WARMED = True


def _compare_results(name, ref, got, m):
    ref_off, ref_ids, ref_t, ref_d = ref
    off, ids, t, d = got
    if not np.array_equal(ref_off, off) or not np.array_equal(ref_ids, ids):
        counts_ref = np.diff(ref_off)
        counts = np.diff(off)
        bad = np.nonzero(counts_ref != counts)[0]
        if bad.size == 0:
            per_ray_ok = np.ones(m, bool)
            for i in range(m):
                if not np.array_equal(ref_ids[ref_off[i]:ref_off[i + 1]],
                                      ids[off[i]:off[i + 1]]):
                    per_ray_ok[i] = False
            bad = np.nonzero(~per_ray_ok)[0]
        detail = f"first divergent ray {int(bad[0])}" if bad.size else "offsets differ"
        raise FairnessError(
            f"{name} returned a different result set than the reference ({detail}); "
            "timings would not be comparable")
    if not (np.allclose(ref_t, t, rtol=0, atol=1e-12)
            and np.allclose(ref_d, d, rtol=0, atol=1e-12)):
        raise FairnessError(f"{name} projection values diverge from the reference")


def run_bench(cloud: PointCloud, camera: Camera, config: SearchConfig,
              structures=STRUCTURES, m_rays: int | None = None, repeats: int = 5,
              t_near: float = 1.0, t_far: float = 10.0,
              sampler_cfg: SamplerConfig | None = None,
              with_sampling: bool = True) -> list[BenchRecord]:
    """Time build and query for each structure on one workload.

    The first listed structure that is ``brute`` (else the first structure)
    provides the reference result set; any divergence aborts with
    :class:`FairnessError`.  Sampling is timed once on the reference results
    and reported on every record, since inputs are identical by the gate.
    """
    unknown = set(structures) - set(STRUCTURES)
    if unknown:
        raise ValueError(f"unknown structures: {sorted(unknown)}")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    warm_kernels()
    dirs, pixels = ray_grid(camera)
    total = dirs.shape[0]
    m = total if m_rays is None else int(m_rays)
    if not (1 <= m <= total):
        raise ValueError(f"m_rays must be in [1, {total}]")
    dirs = np.ascontiguousarray(dirs[:m])
    pixels = np.ascontiguousarray(pixels[:m])
    tn = np.full(m, float(t_near))
    tf = np.full(m, float(t_far))
    slopes = radius_slopes(camera, pixels, config.kernel_radius, config.use_approx_radius)
    adapters = _adapters(camera)
    names = list(structures)
    ref_name = "brute" if "brute" in names else names[0]
    ordered = [ref_name] + [s for s in names if s != ref_name]

    reference = None
    sample_ms = 0.0
    results: dict[str, BenchRecord] = {}
    for name in ordered:
        adapter = adapters[name]
        t0 = time.perf_counter()
        handle = adapter.build(cloud, camera, config)
        build_ms = 1e3 * (time.perf_counter() - t0)
        # small warmup slice, then timed repeats over the full batch
        warm_m = min(m, 64)
        adapter.query(handle, pixels[:warm_m], dirs[:warm_m], tn[:warm_m],
                      tf[:warm_m], slopes[:warm_m])
        times = []
        out = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = adapter.query(handle, pixels, dirs, tn, tf, slopes)
            times.append(1e3 * (time.perf_counter() - t0))
        query_ms = statistics.median(times)
        if reference is None:
            reference = out
            if with_sampling:
                stimes = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    sampler.sample_batch_arrays(*out, slopes,
                                                sampler_cfg or SamplerConfig(),
                                                cloud.colors)
                    stimes.append(1e3 * (time.perf_counter() - t0))
                sample_ms = statistics.median(stimes)
        else:
            _compare_results(name, reference, out, m)
        q_total = int(out[0][-1])
        results[name] = BenchRecord(
            structure=name, n=cloud.count, m=m, build_ms=build_ms,
            query_ms=query_ms, sample_ms=sample_ms, q_total=q_total,
            q_mean=q_total / m)
    return [results[name] for name in names]


CSV_HEADER = "structure,n,m,build_ms,query_ms,sample_ms,q_total,q_mean"


def emit_csv(records: list[BenchRecord], path) -> None:
    """Write records with the fixed bench CSV header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(f"{r.structure},{r.n},{r.m},{r.build_ms!r},{r.query_ms!r},"
                     f"{r.sample_ms!r},{r.q_total},{r.q_mean!r}\n")


def read_csv(path) -> list[BenchRecord]:
    """Parse a file written by :func:`emit_csv`."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            s, n, m, bms, qms, sms, qt, qm = line.split(",")
            records.append(BenchRecord(structure=s, n=int(n), m=int(m),
                                       build_ms=float(bms), query_ms=float(qms),
                                       sample_ms=float(sms), q_total=int(qt),
                                       q_mean=float(qm)))
    return records
