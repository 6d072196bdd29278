"""Pinhole camera primitives, ray generation, and the adaptive search radius.

Conventions used throughout the package:

* The camera frame rows are ``right``, ``up``, ``forward`` (orthonormal).
* Pixel ``(u, v)`` has its center at ``(u + 0.5, v + 0.5)`` in pixel
  coordinates; ``u`` grows along ``right``, ``v`` grows downward (against
  ``up``).  The image plane sits at ``focal_length`` along ``forward``.
* All quantities are world units unless a name says pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Camera",
    "Ray",
    "SearchConfig",
    "pixel_disc_radius",
    "kernel_size",
    "kernel_radius_for_min_radius",
    "radius_slope",
    "adaptive_radius_exact",
    "adaptive_radius_approx",
    "generate_rays",
    "ray_grid",
    "load_camera",
]

_ORTHO_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if not math.isfinite(n) or n == 0.0:
        raise ValueError(f"{name} must be a nonzero finite vector")
    return v / n


@dataclass(frozen=True)
class Camera:
    """Calibrated pinhole camera with rectangular pixels.

    ``orientation`` is a 3x3 matrix whose rows are the right, up and forward
    unit vectors.  ``pixel_width``/``pixel_height`` are the world-space pixel
    dimensions on the image plane.
    """

    origin: np.ndarray
    orientation: np.ndarray
    focal_length: float
    width: int
    height: int
    pixel_width: float
    pixel_height: float

    def __post_init__(self):
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        orientation = np.array(self.orientation, dtype=np.float64)
        if orientation.shape != (3, 3):
            raise ValueError("orientation must be a 3x3 matrix")
        if not (np.all(np.isfinite(origin)) and np.all(np.isfinite(orientation))):
            raise ValueError("camera parameters must be finite")
        if not np.allclose(orientation @ orientation.T, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("orientation rows must be orthonormal")
        if not (self.focal_length > 0 and self.pixel_width > 0 and self.pixel_height > 0):
            raise ValueError("focal length and pixel sizes must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1 pixels")
        object.__setattr__(self, "origin", _freeze(origin))
        object.__setattr__(self, "orientation", _freeze(orientation))
        object.__setattr__(self, "focal_length", float(self.focal_length))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "pixel_width", float(self.pixel_width))
        object.__setattr__(self, "pixel_height", float(self.pixel_height))

    @classmethod
    def from_vectors(cls, origin, forward, up, focal_length, width, height,
                     pixel_width, pixel_height) -> "Camera":
        """Build a camera from a forward direction and an approximate up vector."""
        fwd = _unit(forward, "forward")
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(up, fwd)
        nr = float(np.linalg.norm(right))
        if nr < _ORTHO_TOL:
            raise ValueError("up and forward must not be colinear")
        right /= nr
        true_up = np.cross(fwd, right)
        return cls(origin, np.stack([right, true_up, fwd]), focal_length,
                   width, height, pixel_width, pixel_height)

    @property
    def right(self) -> np.ndarray:
        return self.orientation[0]

    @property
    def up(self) -> np.ndarray:
        return self.orientation[1]

    @property
    def forward(self) -> np.ndarray:
        return self.orientation[2]

    def pixel_center(self, u: int, v: int) -> np.ndarray:
        """World position of the center of pixel (u, v) on the image plane."""
        du = (u + 0.5 - 0.5 * self.width) * self.pixel_width
        dv = (v + 0.5 - 0.5 * self.height) * self.pixel_height
        return (self.origin + self.focal_length * self.forward
                + du * self.right - dv * self.up)

    def project(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project world points to continuous pixel coordinates.

        Returns ``(u, v, depth)`` where ``depth`` is the signed distance along
        ``forward``; pixel coordinates are only meaningful where ``depth > 0``.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.origin
        depth = pts @ self.forward
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = self.focal_length / depth
            u = (pts @ self.right) * scale / self.pixel_width + 0.5 * self.width
            v = -(pts @ self.up) * scale / self.pixel_height + 0.5 * self.height
        return u, v, depth


@dataclass(frozen=True)
class Ray:
    """A ray through a pixel center, sampled on ``[t_near, t_far]``."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    pixel: tuple[int, int]

    def __post_init__(self):
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        direction = np.array(self.direction, dtype=np.float64).reshape(3)
        if abs(float(np.linalg.norm(direction)) - 1.0) > _ORTHO_TOL:
            raise ValueError("direction must be a unit vector")
        if not (0.0 < self.t_near < self.t_far):
            raise ValueError("require 0 < t_near < t_far")
        object.__setattr__(self, "origin", _freeze(origin))
        object.__setattr__(self, "direction", _freeze(direction))
        object.__setattr__(self, "t_near", float(self.t_near))
        object.__setattr__(self, "t_far", float(self.t_far))
        object.__setattr__(self, "pixel", (int(self.pixel[0]), int(self.pixel[1])))

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def pixel_disc_radius(camera: Camera) -> float:
    """Radius of the disc whose area equals one pixel."""
    return math.sqrt(camera.pixel_width * camera.pixel_height / math.pi)


def kernel_size(kernel_radius: float, disc_radius: float) -> int:
    """Odd pixel span of the search kernel that covers ``kernel_radius``."""
    if disc_radius <= 0:
        raise ValueError("disc_radius must be positive")
    if kernel_radius < 0:
        raise ValueError("kernel_radius must be non-negative")
    return 2 * math.ceil(kernel_radius / disc_radius) + 1


def kernel_radius_for_min_radius(camera: Camera, t_near: float, r_min: float) -> float:
    """Kernel radius that makes the principal-axis search radius ``r_min`` at ``t_near``."""
    if t_near <= 0 or r_min < 0:
        raise ValueError("require t_near > 0 and r_min >= 0")
    return r_min * camera.focal_length / t_near


@dataclass(frozen=True)
class SearchConfig:
    """Search-kernel geometry shared by the index, the baselines and the sampler.

    ``kernel_size`` is derived from the two radii and is always odd; a zero
    kernel radius degenerates to a single-pixel kernel.
    """

    kernel_radius: float
    pixel_disc_radius: float
    use_approx_radius: bool = False
    kernel_size: int = field(init=False)

    def __post_init__(self):
        if self.pixel_disc_radius <= 0:
            raise ValueError("pixel_disc_radius must be positive")
        if self.kernel_radius < 0:
            raise ValueError("kernel_radius must be non-negative")
        object.__setattr__(self, "kernel_radius", float(self.kernel_radius))
        object.__setattr__(self, "pixel_disc_radius", float(self.pixel_disc_radius))
        object.__setattr__(
            self, "kernel_size",
            kernel_size(self.kernel_radius, self.pixel_disc_radius))

    @property
    def pad(self) -> int:
        """Rasterization margin in pixels, half the kernel span."""
        return (self.kernel_size - 1) // 2

    @classmethod
    def for_camera(cls, camera: Camera, kernel_radius: float | None = None, *,
                   scale: float = 2.0, use_approx_radius: bool = False) -> "SearchConfig":
        """Config for ``camera``; the radius defaults to ``scale`` pixel discs."""
        disc = pixel_disc_radius(camera)
        if kernel_radius is None:
            kernel_radius = scale * disc
        return cls(kernel_radius, disc, use_approx_radius)


def _pixel_plane_offsets(camera: Camera, pixel: tuple[int, int]) -> tuple[float, float]:
    u, v = pixel
    du = (u + 0.5 - 0.5 * camera.width) * camera.pixel_width
    dv = (v + 0.5 - 0.5 * camera.height) * camera.pixel_height
    return du, dv


def radius_slope(camera: Camera, pixel: tuple[int, int], kernel_radius: float,
                 approx: bool = False) -> float:
    """Growth rate of the search radius along a pixel's ray (radius = slope * t).

    The search cone through the kernel disc widens linearly with the distance
    from the ray origin; this returns the per-unit-distance radius for the ray
    through the given pixel's center.
    """
    f = camera.focal_length
    du, dv = _pixel_plane_offsets(camera, pixel)
    a2 = du * du + dv * dv          # squared offset from the principal point
    ae2 = f * f + a2                # squared distance origin -> pixel center
    if approx:
        return f * kernel_radius / ae2
    ab = math.hypot(math.sqrt(a2) - kernel_radius, f)
    return f * kernel_radius / (math.sqrt(ae2) * ab)


def radius_slopes(camera: Camera, pixels: np.ndarray, kernel_radius: float,
                  approx: bool = False) -> np.ndarray:
    """Vectorized :func:`radius_slope` for an ``(m, 2)`` array of pixels."""
    f = camera.focal_length
    du = (pixels[:, 0] + 0.5 - 0.5 * camera.width) * camera.pixel_width
    dv = (pixels[:, 1] + 0.5 - 0.5 * camera.height) * camera.pixel_height
    a2 = du * du + dv * dv
    ae2 = f * f + a2
    if approx:
        return f * kernel_radius / ae2
    ab = np.hypot(np.sqrt(a2) - kernel_radius, f)
    return f * kernel_radius / (np.sqrt(ae2) * ab)


def _check_t(ray: Ray, t: float) -> None:
    if not (ray.t_near <= t <= ray.t_far):
        raise ValueError(f"t={t} outside [{ray.t_near}, {ray.t_far}]")


def adaptive_radius_exact(camera: Camera, ray: Ray, t: float,
                          kernel_radius: float) -> float:
    """Search radius at parameter ``t`` of the cone through the kernel disc.

    Strictly increasing and exactly linear in ``t`` for a fixed ray.
    """
    _check_t(ray, t)
    return t * radius_slope(camera, ray.pixel, kernel_radius, approx=False)


def adaptive_radius_approx(camera: Camera, ray: Ray, t: float,
                           kernel_radius: float) -> float:
    """Small-angle approximation of :func:`adaptive_radius_exact`.

    Cheaper to evaluate; accurate when the kernel disc subtends a small angle
    at the ray origin and the pixel is not far off the principal axis.
    """
    _check_t(ray, t)
    return t * radius_slope(camera, ray.pixel, kernel_radius, approx=True)


def ray_grid(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and pixel coordinates for every pixel, row-major.

    Returns ``(directions, pixels)`` with shapes ``(W*H, 3)`` and ``(W*H, 2)``;
    entry ``v * W + u`` belongs to pixel ``(u, v)``.
    """
    u = np.arange(camera.width, dtype=np.float64)
    v = np.arange(camera.height, dtype=np.float64)
    du = (u + 0.5 - 0.5 * camera.width) * camera.pixel_width
    dv = (v + 0.5 - 0.5 * camera.height) * camera.pixel_height
    duu, dvv = np.meshgrid(du, dv)
    dirs = (camera.focal_length * camera.forward
            + duu[..., None] * camera.right
            - dvv[..., None] * camera.up).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    uu, vv = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.int64)
    return dirs, pixels


def generate_rays(camera: Camera, t_near: float, t_far: float) -> list[Ray]:
    """One ray per pixel through its center, row-major over ``(v, u)``."""
    if not (0.0 < t_near < t_far):
        raise ValueError("require 0 < t_near < t_far")
    dirs, pixels = ray_grid(camera)
    return [
        Ray(camera.origin, dirs[i], t_near, t_far, (int(pixels[i, 0]), int(pixels[i, 1])))
        for i in range(dirs.shape[0])
    ]


def load_camera(path) -> Camera:
    """Read a camera from a flat text config, one ``key value...`` pair per line.

    Recognized keys: ``f``, ``width``, ``height``, ``pixel_width``,
    ``pixel_height``, ``origin x y z``, ``forward x y z``, ``up x y z``.
    Blank lines and ``#`` comments are ignored.
    """
    values: dict[str, list[float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                values[parts[0]] = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value in {line!r}") from exc
    required = {"f": 1, "width": 1, "height": 1, "pixel_width": 1,
                "pixel_height": 1, "origin": 3, "forward": 3, "up": 3}
    for key, arity in required.items():
        if key not in values:
            raise ValueError(f"camera config missing key {key!r}")
        if len(values[key]) != arity:
            raise ValueError(f"camera config key {key!r} needs {arity} value(s)")
    return Camera.from_vectors(
        origin=values["origin"],
        forward=values["forward"],
        up=values["up"],
        focal_length=values["f"][0],
        width=int(values["width"][0]),
        height=int(values["height"][0]),
        pixel_width=values["pixel_width"][0],
        pixel_height=values["pixel_height"][0],
    )
