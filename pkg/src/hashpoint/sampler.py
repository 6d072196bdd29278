"""Adaptive primary-surface sampling along rays.

Retrieved neighbor points are projected onto the ray as sample candidates;
each candidate gets a surface-proximity distance (mean distance to its
nearest retrieved points), a confidence, and an occlusion-aware weight.
Retention keeps the candidates that dominate rendering, which concentrates
samples on the first surface the ray hits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Camera, Ray, SearchConfig, radius_slope
from .hash_index import HashIndex, QueryResult, query

__all__ = [
    "SamplerConfig",
    "SampleCandidate",
    "make_candidates",
    "pseudo_udf",
    "confidence",
    "occlusion_weights",
    "retain",
    "sample_ray",
    "sample_batch_arrays",
    "write_samples_csv",
]

DEFAULT_BETA_SQ = 0.02


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling hyperparameters.

    ``gamma`` scales every confidence and thereby controls how deep past the
    first surface retention reaches: values near 1 concentrate samples on the
    primary surface, small values keep candidates on surfaces behind it.
    Exactly one retention rule is active: ``epsilon`` mode keeps candidates
    with weight >= epsilon, ``tau`` mode keeps the leading candidates until
    the running transmittance drops below ``tau_min``.
    """

    k_neighbors: int = 8
    beta: float = math.sqrt(DEFAULT_BETA_SQ)
    gamma: float = 0.9
    retention_mode: str = "epsilon"
    epsilon: float = 1e-4
    tau_min: float = 0.01

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.retention_mode not in ("epsilon", "tau"):
            raise ValueError("retention_mode must be 'epsilon' or 'tau'")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not (0.0 <= self.tau_min < 1.0):
            raise ValueError("tau_min must be in [0, 1)")


@dataclass
class SampleCandidate:
    """A retrieved point projected onto its ray.

    ``udf_distance`` (mean distance to nearby retrieved points),
    ``confidence`` and ``weight`` start unset and are filled by the pipeline
    stages in order.
    """

    t: float
    position: np.ndarray
    radius: float
    dist_perp: float
    point_id: int
    udf_distance: float | None = None
    confidence: float | None = None
    weight: float | None = None


def make_candidates(result: QueryResult, ray: Ray, camera: Camera,
                    config: SearchConfig) -> list[SampleCandidate]:
    """One candidate per retrieved point at its projection parameter.

    Candidates come out sorted by ``t`` ascending (query results already
    are); every candidate carries the adaptive search radius at its ``t``.
    """
    slope = radius_slope(camera, ray.pixel, config.kernel_radius,
                         config.use_approx_radius)
    out = []
    for i in range(len(result)):
        t = float(result.t_proj[i])
        out.append(SampleCandidate(
            t=t,
            position=ray.origin + t * ray.direction,
            radius=slope * t,
            dist_perp=float(result.dist_perp[i]),
            point_id=int(result.point_ids[i]),
        ))
    out.sort(key=lambda c: c.t)
    return out


def pseudo_udf(candidate: SampleCandidate, neighbors: QueryResult, k: int) -> float:
    """Mean distance from the candidate to its nearest retrieved points.

    Eligible neighbors are the retrieved points within the candidate's radius
    of the ray when at least ``k`` of them exist, otherwise all retrieved
    points.  Distances decompose along and across the ray:
    |x_i - (o + t_j d)|^2 = (t_i - t_j)^2 + dist_perp_i^2.
    """
    if len(neighbors) == 0:
        raise ValueError("candidate needs at least one retrieved neighbor")
    if k < 1:
        raise ValueError("k must be at least 1")
    d2 = (neighbors.t_proj - candidate.t) ** 2 + neighbors.dist_perp ** 2
    eligible = neighbors.dist_perp <= candidate.radius
    pool = d2[eligible] if int(eligible.sum()) >= k else d2
    ksel = min(k, pool.shape[0])
    return float(np.mean(np.sqrt(np.partition(pool, ksel - 1)[:ksel])))


def confidence(udf_distance: float, beta: float, gamma: float) -> float:
    """Surface confidence ``gamma * exp(-(d/beta)^2)``, decreasing in ``d``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must be in (0, 1]")
    if udf_distance < 0:
        raise ValueError("distance must be non-negative")
    return gamma * math.exp(-(udf_distance * udf_distance) / (beta * beta))


def occlusion_weights(candidates: list[SampleCandidate]) -> list[SampleCandidate]:
    """Fill rendering weights ``w_j = alpha_j * prod_{k<j} (1 - alpha_k)``.

    Front-to-back compositing: a candidate's weight is its confidence scaled
    by the transmittance that survives all candidates in front of it.
    """
    prev_t = -math.inf
    for c in candidates:
        if c.confidence is None:
            raise ValueError("candidate confidences must be set first")
        if c.t < prev_t:
            raise ValueError("candidates must be sorted by t ascending")
        prev_t = c.t
    trans = 1.0
    for c in candidates:
        c.weight = c.confidence * trans
        trans *= 1.0 - c.confidence
    return candidates


def retain(candidates: list[SampleCandidate], config: SamplerConfig) -> list[SampleCandidate]:
    """Keep the candidates that matter for rendering, preserving t order.

    ``epsilon`` mode keeps every candidate with weight >= epsilon; ``tau``
    mode walks front to back and stops once the running transmittance falls
    below ``tau_min``.
    """
    if config.retention_mode == "epsilon":
        return [c for c in candidates if c.weight >= config.epsilon]
    kept = []
    trans = 1.0
    for c in candidates:
        if trans < config.tau_min:
            break
        kept.append(c)
        trans *= 1.0 - c.confidence
    return kept


def sample_ray(index: HashIndex, ray: Ray, search_cfg: SearchConfig | None = None,
               sampler_cfg: SamplerConfig | None = None) -> list[SampleCandidate]:
    """Query neighbors and run the full sampling pipeline for one ray."""
    search_cfg = search_cfg or index.config
    sampler_cfg = sampler_cfg or SamplerConfig()
    result = query(index, ray, search_cfg)
    candidates = make_candidates(result, ray, index.camera, search_cfg)
    for c in candidates:
        c.udf_distance = pseudo_udf(c, result, sampler_cfg.k_neighbors)
        c.confidence = confidence(c.udf_distance, sampler_cfg.beta, sampler_cfg.gamma)
    occlusion_weights(candidates)
    return retain(candidates, sampler_cfg)


def sample_batch_arrays(offsets, ids, t_proj, dist_perp, slopes,
                        sampler_cfg: SamplerConfig, colors: np.ndarray | None = None):
    """Batch sampling pipeline over CSR query results.

    Returns ``(offsets, point_ids, t, dist_perp, udf, alpha, weight, color,
    transmittance)`` for the retained candidates; ``color`` is the
    inverse-distance blend of each candidate's selected neighbors and is
    empty unless ``colors`` is given.  ``transmittance`` is per ray, over all
    candidates (retained or not).
    """
    want_color = colors is not None
    col = (np.ascontiguousarray(colors, dtype=np.float64) if want_color
           else np.zeros((0, 3)))
    return _kernels.sample_batch(
        np.ascontiguousarray(offsets, dtype=np.int64),
        np.ascontiguousarray(ids, dtype=np.int64),
        np.ascontiguousarray(t_proj, dtype=np.float64),
        np.ascontiguousarray(dist_perp, dtype=np.float64),
        np.ascontiguousarray(slopes, dtype=np.float64),
        sampler_cfg.k_neighbors, sampler_cfg.beta * sampler_cfg.beta,
        sampler_cfg.gamma, sampler_cfg.retention_mode == "epsilon",
        sampler_cfg.epsilon, sampler_cfg.tau_min, col, want_color)


def write_samples_csv(path, ray_ids, t, udf, alpha, weight, point_ids) -> None:
    """Dump per-candidate rows as ``ray_id,t,d,alpha,w,point_id``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ray_id,t,d,alpha,w,point_id\n")
        for i in range(len(ray_ids)):
            fh.write(f"{int(ray_ids[i])},{float(t[i])!r},{float(udf[i])!r},"
                     f"{float(alpha[i])!r},{float(weight[i])!r},{int(point_ids[i])}\n")
