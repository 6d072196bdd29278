"""Deterministic synthetic scenes and a matching default camera."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, load_ply
from .geometry import Camera

__all__ = ["SceneSpec", "generate_scene", "scene_camera", "PLANE_PALETTE"]

SCENE_KINDS = ("uniform_box", "sphere_surface", "parallel_planes", "ply_file")

PLANE_PALETTE = np.array([
    (0.9, 0.2, 0.2),
    (0.2, 0.9, 0.2),
    (0.2, 0.2, 0.9),
    (0.8, 0.8, 0.2),
    (0.8, 0.2, 0.8),
    (0.2, 0.8, 0.8),
])


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a synthetic cloud; identical specs yield identical clouds.

    ``noise`` jitters surfaces (clipped at four standard deviations so the
    stated surface bound is strict); ``center``/``extent`` place the scene in
    front of the default camera.
    """

    kind: str
    n: int = 1000
    seed: int = 0
    noise: float = 0.0
    center: tuple[float, float, float] = (0.0, 0.0, 4.0)
    extent: float = 2.0
    sphere_radius: float = 1.0
    plane_count: int = 2
    plane_gap: float = 0.5
    path: str | None = None

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"kind must be one of {SCENE_KINDS}")
        if self.n < 0 or self.noise < 0 or self.extent <= 0:
            raise ValueError("need n >= 0, noise >= 0, extent > 0")
        if self.kind == "parallel_planes" and self.plane_count < 1:
            raise ValueError("plane_count must be at least 1")
        if self.kind == "ply_file" and not self.path:
            raise ValueError("ply_file scenes need a path")


def _clipped_normal(rng, sigma, size):
    if sigma == 0.0:
        return np.zeros(size)
    return np.clip(rng.normal(0.0, sigma, size), -4.0 * sigma, 4.0 * sigma)


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Materialize the recipe into a colored point cloud."""
    if spec.kind == "ply_file":
        return load_ply(spec.path)
    rng = np.random.default_rng(spec.seed)
    center = np.asarray(spec.center, dtype=np.float64)
    n = spec.n
    if spec.kind == "uniform_box":
        half = 0.5 * spec.extent
        positions = center + rng.uniform(-half, half, (n, 3))
        colors = rng.uniform(0.0, 1.0, (n, 3))
    elif spec.kind == "sphere_surface":
        dirs = rng.normal(size=(n, 3))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        dirs /= norms
        radii = spec.sphere_radius + _clipped_normal(rng, spec.noise, n)
        positions = center + dirs * radii[:, None]
        colors = 0.5 + 0.5 * dirs
    else:  # parallel_planes
        count = spec.plane_count
        z0 = center[2] - 0.5 * (count - 1) * spec.plane_gap
        per = np.full(count, n // count)
        per[: n % count] += 1
        half = 0.5 * spec.extent
        chunks = []
        color_chunks = []
        for i in range(count):
            ni = int(per[i])
            xy = center[:2] + rng.uniform(-half, half, (ni, 2))
            z = z0 + i * spec.plane_gap + _clipped_normal(rng, spec.noise, ni)
            chunks.append(np.column_stack([xy, z]))
            color_chunks.append(np.tile(PLANE_PALETTE[i % len(PLANE_PALETTE)], (ni, 1)))
        positions = np.concatenate(chunks) if chunks else np.zeros((0, 3))
        colors = np.concatenate(color_chunks) if color_chunks else np.zeros((0, 3))
    return PointCloud(positions, colors)


def scene_camera(width: int = 64, height: int = 64, fov_deg: float = 40.0,
                 origin=(0.0, 0.0, 0.0), target=(0.0, 0.0, 4.0),
                 up=(0.0, 1.0, 0.0), focal_length: float = 1.0) -> Camera:
    """Square-pixel camera looking at the default scene center.

    ``fov_deg`` is the horizontal field of view across ``width`` pixels.
    """
    origin = np.asarray(origin, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - origin
    pixel = 2.0 * focal_length * np.tan(np.radians(fov_deg) / 2.0) / width
    return Camera.from_vectors(origin, forward, up, focal_length,
                               width, height, pixel, pixel)
