"""HashPoint: rasterization-backed hash indexing of point clouds for fast
per-ray neighbor search, adaptive cone queries, primary-surface sampling and
point-based rendering, with brute-force/grid/tree baselines and a benchmark
harness."""

from .cloud import PointCloud, load_csv, load_ply, save_csv, save_ply
from .geometry import (
    Camera,
    Ray,
    SearchConfig,
    adaptive_radius_approx,
    adaptive_radius_exact,
    generate_rays,
    kernel_radius_for_min_radius,
    kernel_size,
    load_camera,
    pixel_disc_radius,
)
from .hash_index import HashIndex, QueryResult, build, query, query_batch
from .baselines import (
    KdTree,
    Octree,
    UniformGrid,
    brute_force_query,
    build_grid,
    build_kdtree,
    build_octree,
    grid_query,
    kdtree_query,
    octree_query,
)
from .sampler import (
    SampleCandidate,
    SamplerConfig,
    confidence,
    make_candidates,
    occlusion_weights,
    pseudo_udf,
    retain,
    sample_ray,
)
from .renderer import Image, RenderConfig, render, render_knp, render_volume
from .scenes import SceneSpec, generate_scene, scene_camera
from .bench import BenchRecord, FairnessError, emit_csv, read_csv, run_bench

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "load_csv", "load_ply", "save_csv", "save_ply",
    "Camera", "Ray", "SearchConfig", "adaptive_radius_approx",
    "adaptive_radius_exact", "generate_rays", "kernel_radius_for_min_radius",
    "kernel_size", "load_camera", "pixel_disc_radius",
    "HashIndex", "QueryResult", "build", "query", "query_batch",
    "KdTree", "Octree", "UniformGrid", "brute_force_query", "build_grid",
    "build_kdtree", "build_octree", "grid_query", "kdtree_query", "octree_query",
    "SampleCandidate", "SamplerConfig", "confidence", "make_candidates",
    "occlusion_weights", "pseudo_udf", "retain", "sample_ray",
    "Image", "RenderConfig", "render", "render_knp", "render_volume",
    "SceneSpec", "generate_scene", "scene_camera",
    "BenchRecord", "FairnessError", "emit_csv", "read_csv", "run_bench",
]
