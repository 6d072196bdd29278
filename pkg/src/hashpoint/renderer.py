"""Color and depth synthesis from retained surface samples.

Two blending strategies over the sampler output: nearest-point blending
(inverse perpendicular distance over the K nearest retained points) and
volume compositing (per-sample densities derived from the confidences, so
the compositing weights reproduce the sampler's occlusion-aware weights).
Weights here are geometric; there is no learned component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Ray, SearchConfig, radius_slopes
from .hash_index import HashIndex, query_batch_arrays, _pack_rays
from .sampler import SamplerConfig, sample_batch_arrays

__all__ = [
    "RenderConfig",
    "Image",
    "render",
    "render_knp",
    "render_volume",
    "volume_sample_weights",
    "write_ppm",
    "write_pgm16",
]

MODES = ("knp_blend", "volume")


@dataclass(frozen=True)
class RenderConfig:
    """Rendering mode, background color, and K for nearest-point blending."""

    mode: str = "volume"
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    knp_k: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.knp_k < 1:
            raise ValueError("knp_k must be at least 1")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3 or any(not (0.0 <= c <= 1.0) for c in bg):
            raise ValueError("background must be three channels in [0, 1]")
        object.__setattr__(self, "background", bg)


@dataclass
class Image:
    """RGB buffer in [0, 1] plus an expected-depth buffer, camera sized."""

    color: np.ndarray
    depth: np.ndarray | None
    t_near: float
    t_far: float

    @property
    def width(self) -> int:
        return self.color.shape[1]

    @property
    def height(self) -> int:
        return self.color.shape[0]


def volume_sample_weights(alphas: np.ndarray, ts: np.ndarray,
                          t_far: float) -> tuple[np.ndarray, float]:
    """Compositing weights of a sample sequence via per-sample densities.

    Each sample gets a density ``sigma = -log(1 - alpha) / delta`` over its
    segment, so its compositing weight ``transmittance * (1 - exp(-sigma *
    delta))`` reproduces ``alpha``-based front-to-back weights.  The last
    segment reuses the previous length (or ``t_far - t`` for a single
    sample).  An opaque sample (alpha = 1) terminates the ray.  Returns the
    weights and the final transmittance.
    """
    n = alphas.shape[0]
    weights = np.zeros(n)
    trans = 1.0
    if n == 0:
        return weights, trans
    deltas = np.empty(n)
    if n == 1:
        deltas[0] = t_far - ts[0]
    else:
        deltas[:-1] = np.diff(ts)
        deltas[-1] = deltas[-2]
    for j in range(n):
        a = float(alphas[j])
        dt = float(deltas[j])
        if a >= 1.0:
            absorbed = 1.0
            passed = 0.0
        elif dt > 0.0:
            sigma = -math.log1p(-a) / dt
            passed = math.exp(-sigma * dt)
            absorbed = 1.0 - passed
        else:
            # degenerate zero-length segment: use the confidence directly
            absorbed = a
            passed = 1.0 - a
        weights[j] = trans * absorbed
        trans *= passed
    return weights, trans


def _prepare(index: HashIndex, rays: list[Ray], search_cfg, sampler_cfg):
    if not index.points.has_colors:
        raise ValueError("rendering requires a point cloud with colors")
    search_cfg = search_cfg or index.config
    sampler_cfg = sampler_cfg or SamplerConfig()
    pixels, dirs, t_near, t_far = _pack_rays(rays)
    offsets, ids, t, dist, _, _ = query_batch_arrays(
        index, pixels, dirs, t_near, t_far, search_cfg)
    slopes = radius_slopes(index.camera, pixels, search_cfg.kernel_radius,
                           search_cfg.use_approx_radius)
    retained = sample_batch_arrays(offsets, ids, t, dist, slopes, sampler_cfg,
                                   index.points.colors)
    return pixels, t_near, t_far, retained


def _blank(index: HashIndex, rays: list[Ray], background) -> Image:
    cam = index.camera
    t_near = rays[0].t_near if rays else 1.0
    t_far = rays[0].t_far if rays else 2.0
    color = np.empty((cam.height, cam.width, 3))
    color[:, :] = background
    depth = np.full((cam.height, cam.width), t_far, dtype=np.float64)
    return Image(color=color, depth=depth, t_near=t_near, t_far=t_far)


def render_knp(index: HashIndex, rays: list[Ray], search_cfg: SearchConfig | None = None,
               sampler_cfg: SamplerConfig | None = None,
               render_cfg: RenderConfig | None = None) -> Image:
    """Blend each ray's K nearest retained points by inverse distance.

    Points lying exactly on the ray share the full weight; rays with no
    retained candidates get the background color and far-plane depth.
    """
    render_cfg = render_cfg or RenderConfig(mode="knp_blend")
    pixels, t_near, t_far, retained = _prepare(index, rays, search_cfg, sampler_cfg)
    roff, rid, rt, rdist = retained[0], retained[1], retained[2], retained[3]
    image = _blank(index, rays, render_cfg.background)
    colors = index.points.colors
    for i in range(len(rays)):
        lo, hi = int(roff[i]), int(roff[i + 1])
        if hi == lo:
            continue
        d = rdist[lo:hi]
        k = min(render_cfg.knp_k, hi - lo)
        sel = np.argpartition(d, k - 1)[:k]
        dsel = d[sel]
        zero = dsel == 0.0
        w = zero.astype(np.float64) if zero.any() else 1.0 / dsel
        w /= w.sum()
        u, v = int(pixels[i, 0]), int(pixels[i, 1])
        image.color[v, u] = w @ colors[rid[lo:hi][sel]]
        image.depth[v, u] = float(w @ rt[lo:hi][sel])
    return image


def render_volume(index: HashIndex, rays: list[Ray], search_cfg: SearchConfig | None = None,
                  sampler_cfg: SamplerConfig | None = None,
                  render_cfg: RenderConfig | None = None) -> Image:
    """Composite retained samples front to back with density-derived weights.

    Sample colors are the inverse-distance blends of each candidate's
    selected neighbors; leftover transmittance goes to the background.
    """
    render_cfg = render_cfg or RenderConfig(mode="volume")
    pixels, t_near, t_far, retained = _prepare(index, rays, search_cfg, sampler_cfg)
    roff, rt, ralpha, rcolor = retained[0], retained[2], retained[5], retained[7]
    image = _blank(index, rays, render_cfg.background)
    bg = np.asarray(render_cfg.background)
    for i in range(len(rays)):
        lo, hi = int(roff[i]), int(roff[i + 1])
        u, v = int(pixels[i, 0]), int(pixels[i, 1])
        if hi == lo:
            image.color[v, u] = bg
            image.depth[v, u] = t_far[i]
            continue
        weights, trans = volume_sample_weights(ralpha[lo:hi], rt[lo:hi], float(t_far[i]))
        image.color[v, u] = weights @ rcolor[lo:hi] + trans * bg
        wsum = float(weights.sum())
        image.depth[v, u] = float(weights @ rt[lo:hi]) / wsum if wsum > 0 else t_far[i]
    return image


def render(index: HashIndex, rays: list[Ray], search_cfg: SearchConfig | None = None,
           sampler_cfg: SamplerConfig | None = None,
           render_cfg: RenderConfig | None = None) -> Image:
    """Dispatch on ``render_cfg.mode``."""
    render_cfg = render_cfg or RenderConfig()
    if render_cfg.mode == "knp_blend":
        return render_knp(index, rays, search_cfg, sampler_cfg, render_cfg)
    return render_volume(index, rays, search_cfg, sampler_cfg, render_cfg)


def write_ppm(image: Image, path) -> None:
    """Binary PPM (P6, 8-bit) color dump."""
    data = np.rint(np.clip(image.color, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm16(image: Image, path) -> None:
    """Binary PGM (P5, 16-bit big-endian) depth dump, normalized to [t_near, t_far]."""
    if image.depth is None:
        raise ValueError("image has no depth buffer")
    span = image.t_far - image.t_near
    norm = np.clip((image.depth - image.t_near) / span, 0.0, 1.0)
    data = np.rint(norm * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
