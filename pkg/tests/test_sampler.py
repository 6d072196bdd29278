"""Candidate pipeline: pseudo-UDF, confidence, weights, retention."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hashpoint.geometry import SearchConfig, generate_rays, radius_slope, radius_slopes
from hashpoint.hash_index import QueryResult, build, query, query_batch_arrays
from hashpoint.sampler import (
    SampleCandidate,
    SamplerConfig,
    confidence,
    make_candidates,
    occlusion_weights,
    pseudo_udf,
    retain,
    sample_batch_arrays,
    sample_ray,
)
from hashpoint.scenes import SceneSpec, generate_scene, scene_camera

BETA = SamplerConfig().beta


def planes_setup(gap=1.5, n=6000, count=2, width=24, height=24, noise=0.0,
                 extent=2.0):
    cloud = generate_scene(SceneSpec(kind="parallel_planes", n=n, seed=0,
                                     plane_count=count, plane_gap=gap, noise=noise,
                                     extent=extent))
    camera = scene_camera(width, height, fov_deg=30)
    config = SearchConfig.for_camera(camera, scale=2.0)
    index = build(cloud, camera, config)
    rays = generate_rays(camera, 1.0, 10.0)
    return cloud, camera, config, index, rays


def result_of(ts, dists):
    ids = np.arange(len(ts), dtype=np.int64)
    return QueryResult(ids, np.asarray(ts, float), np.asarray(dists, float))


def candidate_at(t, radius=1.0, dist=0.0, pid=0):
    return SampleCandidate(t=t, position=np.zeros(3), radius=radius,
                           dist_perp=dist, point_id=pid)


class TestSamplerConfig:
    def test_defaults(self):
        cfg = SamplerConfig()
        assert cfg.k_neighbors == 8
        assert cfg.beta**2 == pytest.approx(0.02)
        assert cfg.gamma == 0.9
        assert cfg.retention_mode == "epsilon"

    def test_validation(self):
        for kwargs in (dict(k_neighbors=0), dict(beta=0.0), dict(gamma=0.0),
                       dict(gamma=1.5), dict(retention_mode="x"),
                       dict(epsilon=-1.0), dict(tau_min=1.0)):
            with pytest.raises(ValueError):
                SamplerConfig(**kwargs)


class TestMakeCandidates:
    def test_empty(self):
        cloud, camera, config, index, rays = planes_setup(n=0)
        assert make_candidates(QueryResult.empty(), rays[0], camera, config) == []

    def test_single_point_at_perpendicular_foot(self):
        cloud, camera, config, index, rays = planes_setup(n=0)
        ray = rays[12 * 24 + 12]
        t_star = 3.7
        foot = ray.point_at(t_star) + 1e-4 * np.array([0, 1, 0])
        res = QueryResult(np.array([5]), np.array([t_star]), np.array([1e-4]))
        [cand] = make_candidates(res, ray, camera, config)
        assert cand.t == pytest.approx(t_star)
        assert cand.point_id == 5
        assert cand.radius == pytest.approx(
            t_star * radius_slope(camera, ray.pixel, config.kernel_radius))
        np.testing.assert_allclose(cand.position, ray.point_at(t_star))
        assert cand.udf_distance is None and cand.weight is None

    def test_count_and_order_match_query(self):
        cloud, camera, config, index, rays = planes_setup()
        ray = rays[len(rays) // 2]
        res = query(index, ray, config)
        assert len(res) > 0
        cands = make_candidates(res, ray, camera, config)
        assert len(cands) == len(res)
        ts = [c.t for c in cands]
        assert ts == sorted(ts)
        np.testing.assert_allclose(ts, res.t_proj)


class TestPseudoUdf:
    def test_coincident_points(self):
        # neighbors exactly at the candidate's projection
        res = result_of([2.0, 2.0, 2.0], [0.0, 0.0, 0.0])
        cand = candidate_at(2.0, radius=0.5)
        assert pseudo_udf(cand, res, 3) == 0.0

    def test_single_neighbor(self):
        res = result_of([2.0], [0.3])
        cand = candidate_at(2.0, radius=1.0)
        assert pseudo_udf(cand, res, 1) == pytest.approx(0.3)

    def test_mean_of_k_smallest_against_exhaustive_sort(self):
        rng = np.random.default_rng(0)
        ts = rng.uniform(1, 5, 10)
        dists = rng.uniform(0, 0.2, 10)
        res = result_of(ts, dists)
        cand = candidate_at(3.0, radius=10.0)  # everything eligible
        k = 4
        all_d = np.sqrt((ts - cand.t) ** 2 + dists**2)
        expected = np.mean(np.sort(all_d)[:k])
        assert pseudo_udf(cand, res, k) == pytest.approx(expected, rel=1e-12)

    def test_eligibility_prefers_points_within_radius(self):
        # two neighbors inside the radius, two (closer in 3D) outside it
        res = result_of([2.0, 2.0, 2.001, 2.001], [0.05, 0.06, 0.2, 0.21])
        cand = candidate_at(2.0, radius=0.1)
        got = pseudo_udf(cand, res, 2)
        expected = np.mean([np.hypot(0.0, 0.05), np.hypot(0.0, 0.06)])
        assert got == pytest.approx(expected, rel=1e-12)

    def test_falls_back_when_too_few_within_radius(self):
        res = result_of([2.0, 2.0, 2.0], [0.05, 0.2, 0.3])
        cand = candidate_at(2.0, radius=0.1)  # only one eligible, K=2
        got = pseudo_udf(cand, res, 2)
        expected = np.mean([0.05, 0.2])
        assert got == pytest.approx(expected, rel=1e-12)

    def test_fewer_neighbors_than_k(self):
        res = result_of([2.0, 2.5], [0.1, 0.1])
        cand = candidate_at(2.0, radius=5.0)
        got = pseudo_udf(cand, res, 8)
        expected = np.mean([0.1, np.hypot(0.5, 0.1)])
        assert got == pytest.approx(expected, rel=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            pseudo_udf(candidate_at(1.0), QueryResult.empty(), 4)


class TestConfidence:
    def test_zero_distance_gives_gamma(self):
        assert confidence(0.0, 0.5, 0.8) == 0.8

    def test_distance_beta_gives_inverse_e(self):
        assert confidence(0.7, 0.7, 1.0) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_large_distance_vanishes(self):
        assert confidence(7.0, 0.7, 0.9) <= 1e-40

    def test_validation(self):
        with pytest.raises(ValueError):
            confidence(1.0, 0.0, 0.5)
        with pytest.raises(ValueError):
            confidence(1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            confidence(-1.0, 1.0, 0.5)

    @given(d1=st.floats(0, 3), delta=st.floats(1e-6, 3))
    @settings(deadline=None)
    def test_strictly_decreasing(self, d1, delta):
        a1 = confidence(d1, 0.5, 0.9)
        a2 = confidence(d1 + delta, 0.5, 0.9)
        assert a1 > a2 or a2 == 0.0


def weighted(alphas, ts=None):
    ts = ts if ts is not None else np.arange(len(alphas), dtype=float) + 1.0
    cands = [candidate_at(t) for t in ts]
    for c, a in zip(cands, alphas):
        c.confidence = a
    return occlusion_weights(cands)


class TestOcclusionWeights:
    def test_half_half(self):
        cands = weighted([0.5, 0.5])
        assert [c.weight for c in cands] == [0.5, 0.25]

    def test_opaque_first_hit(self):
        cands = weighted([1.0, 0.7])
        assert [c.weight for c in cands] == [1.0, 0.0]

    def test_matches_naive_product(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            alphas = rng.uniform(0, 1, rng.integers(1, 21))
            cands = weighted(alphas)
            for j, c in enumerate(cands):
                naive = alphas[j] * np.prod(1.0 - alphas[:j])
                assert c.weight == pytest.approx(naive, abs=1e-12)

    def test_rejects_unsorted(self):
        cands = [candidate_at(2.0), candidate_at(1.0)]
        for c in cands:
            c.confidence = 0.5
        with pytest.raises(ValueError, match="sorted"):
            occlusion_weights(cands)

    def test_rejects_missing_confidence(self):
        with pytest.raises(ValueError, match="confidence"):
            occlusion_weights([candidate_at(1.0)])

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
    @settings(deadline=None)
    def test_weight_sum_is_absorbed_light(self, alphas):
        cands = weighted(alphas)
        total = sum(c.weight for c in cands)
        assert total == pytest.approx(1.0 - np.prod(1.0 - np.asarray(alphas)),
                                      abs=1e-9)
        assert total <= 1.0 + 1e-12

    def test_equal_alphas_strictly_decreasing(self):
        cands = weighted([0.4] * 10)
        w = [c.weight for c in cands]
        assert all(w[i] > w[i + 1] for i in range(9))

    def test_smaller_distance_larger_weight_at_same_rank(self):
        # identical candidates except the pseudo-UDF at one position
        base = [0.1, 0.2, 0.1]
        for pos in range(3):
            small, large = [], []
            for variant, d_at_pos in ((small, 0.05), (large, 0.3)):
                cands = [candidate_at(float(j + 1)) for j in range(3)]
                for j, c in enumerate(cands):
                    d = d_at_pos if j == pos else base[j]
                    c.confidence = confidence(d, BETA, 0.9)
                variant.extend(occlusion_weights(cands))
            assert small[pos].weight > large[pos].weight


class TestRetain:
    def test_zero_weights_all_dropped(self):
        cands = [candidate_at(1.0), candidate_at(2.0)]
        for c in cands:
            c.confidence, c.weight = 0.5, 0.0
        assert retain(cands, SamplerConfig(epsilon=1e-4)) == []

    def test_epsilon_keeps_first_surface(self):
        cands = weighted([0.9, 0.09 / 0.1])  # second alpha chosen so w2 = 0.09
        cfg = SamplerConfig(gamma=0.9, epsilon=0.1)
        assert cands[0].weight == pytest.approx(0.9)
        assert cands[1].weight == pytest.approx(0.09)
        kept = retain(cands, cfg)
        assert len(kept) == 1 and kept[0] is cands[0]

    def test_tau_mode_stops_after_transmittance_collapses(self):
        cands = weighted([0.9, 0.9, 0.9, 0.9])
        cfg = SamplerConfig(retention_mode="tau", tau_min=0.05)
        kept = retain(cands, cfg)
        # T before each: 1, 0.1, 0.01 -> stop before the third
        assert len(kept) == 2

    def test_tau_mode_keeps_prefix_even_tiny_weights(self):
        cands = weighted([1e-8, 0.9])
        cfg = SamplerConfig(retention_mode="tau", tau_min=0.01)
        assert len(retain(cands, cfg)) == 2


class TestSampleRay:
    def test_empty_scene(self):
        cloud, camera, config, index, rays = planes_setup(n=0)
        assert sample_ray(index, rays[0]) == []

    def test_dense_plane_samples_near_surface(self):
        cloud, camera, config, index, rays = planes_setup(count=1, n=8000)
        cfg = SamplerConfig()
        hit = 0
        for ray in rays[len(rays) // 2 - 12: len(rays) // 2 + 12]:
            kept = sample_ray(index, ray, config, cfg)
            if not kept:
                continue
            hit += 1
            for c in kept:
                # retained candidates sit within 3 beta of the plane along z
                z = c.position[2]
                assert abs(z - 4.0) <= 3 * cfg.beta
        assert hit > 0

    def test_six_surfaces_primary_dominates(self):
        # density chosen so the cone at the first plane holds well over K points
        cloud, camera, config, index, rays = planes_setup(count=6, gap=1.0, n=30000,
                                                          extent=1.0)
        cfg = SamplerConfig(gamma=0.9, epsilon=1e-4)
        z_first = 4.0 - 2.5  # nearest of six planes centered on z=4
        checked = 0
        for ray in rays[len(rays) // 2 - 20: len(rays) // 2 + 20]:
            kept = sample_ray(index, ray, config, cfg)
            if not kept:
                continue
            checked += 1
            for c in kept:
                assert abs(c.position[2] - z_first) <= 3 * cfg.beta
        assert checked > 10

    def test_pipeline_fills_all_fields(self):
        cloud, camera, config, index, rays = planes_setup()
        kept = sample_ray(index, rays[len(rays) // 2])
        assert kept
        for c in kept:
            assert c.udf_distance is not None and c.udf_distance >= 0
            assert 0 < c.confidence <= 0.9
            assert 0 <= c.weight <= 1


class TestBatchSampler:
    def _batch(self, index, camera, config, rays, cfg, colors=None):
        pixels = np.array([r.pixel for r in rays], np.int64)
        dirs = np.array([r.direction for r in rays])
        tn = np.array([r.t_near for r in rays])
        tf = np.array([r.t_far for r in rays])
        offsets, ids, t, dist, _, _ = query_batch_arrays(index, pixels, dirs, tn, tf, config)
        slopes = radius_slopes(camera, pixels, config.kernel_radius,
                               config.use_approx_radius)
        return sample_batch_arrays(offsets, ids, t, dist, slopes, cfg, colors)

    @pytest.mark.parametrize("mode", ["epsilon", "tau"])
    def test_batch_equals_scalar_pipeline(self, mode):
        cloud, camera, config, index, rays = planes_setup(n=4000, noise=0.05)
        cfg = SamplerConfig(retention_mode=mode)
        subset = rays[::7]
        roff, rid, rt, rdist, rudf, ralpha, rw, _, t_end = self._batch(
            index, camera, config, subset, cfg)
        for i, ray in enumerate(subset):
            kept = sample_ray(index, ray, config, cfg)
            lo, hi = roff[i], roff[i + 1]
            assert hi - lo == len(kept)
            np.testing.assert_array_equal(rid[lo:hi], [c.point_id for c in kept])
            np.testing.assert_allclose(rt[lo:hi], [c.t for c in kept], rtol=1e-14)
            np.testing.assert_allclose(rudf[lo:hi], [c.udf_distance for c in kept],
                                       rtol=1e-9)
            np.testing.assert_allclose(ralpha[lo:hi], [c.confidence for c in kept],
                                       rtol=1e-9)
            np.testing.assert_allclose(rw[lo:hi], [c.weight for c in kept], rtol=1e-9,
                                       atol=1e-15)

    def test_transmittance_covers_all_candidates(self):
        cloud, camera, config, index, rays = planes_setup(n=4000)
        cfg = SamplerConfig()
        subset = rays[::11]
        out = self._batch(index, camera, config, subset, cfg)
        t_end = out[8]
        pixels = np.array([r.pixel for r in subset], np.int64)
        dirs = np.array([r.direction for r in subset])
        tn = np.array([r.t_near for r in subset])
        tf = np.array([r.t_far for r in subset])
        offsets, ids, t, dist, _, _ = query_batch_arrays(index, pixels, dirs, tn, tf, config)
        for i, ray in enumerate(subset):
            res = query(index, ray, config)
            cands = make_candidates(res, ray, camera, config)
            for c in cands:
                c.udf_distance = pseudo_udf(c, res, cfg.k_neighbors)
                c.confidence = confidence(c.udf_distance, cfg.beta, cfg.gamma)
            expected = np.prod([1.0 - c.confidence for c in cands]) if cands else 1.0
            assert t_end[i] == pytest.approx(expected, rel=1e-9)


class TestGammaSweep:
    def test_retained_counts_non_increasing_in_gamma(self):
        cloud, camera, config, index, rays = planes_setup(count=2, gap=1.5, n=8000)
        counts = []
        subset = rays[::5]
        for gamma in (0.1, 0.3, 0.5, 0.7, 0.9):
            cfg = SamplerConfig(gamma=gamma, epsilon=1e-4)
            per_ray = [len(sample_ray(index, r, config, cfg)) for r in subset]
            counts.append(per_ray)
        counts = np.array(counts)
        assert np.all(np.diff(counts, axis=0) <= 0)
        assert counts[0].sum() > counts[-1].sum()
