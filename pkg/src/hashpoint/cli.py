"""Command-line interface: bench, query, sample, render, index-stats."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import baselines, bench, hash_index, renderer, sampler, scenes
from .cloud import load_csv, load_ply
from .geometry import Ray, SearchConfig, load_camera, radius_slopes, ray_grid
from .sampler import SamplerConfig


def _add_scene_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scene")
    g.add_argument("--scene", default="uniform_box",
                   choices=["uniform_box", "sphere_surface", "parallel_planes", "ply", "csv"],
                   help="synthetic scene kind or point file format")
    g.add_argument("--input", help="point file for --scene ply/csv")
    g.add_argument("--n", type=int, default=10000, help="synthetic point count")
    g.add_argument("--seed", type=int, default=0, help="scene RNG seed")
    g.add_argument("--noise", type=float, default=0.0, help="surface jitter sigma")
    g.add_argument("--extent", type=float, default=2.0, help="scene extent")
    g.add_argument("--sphere-radius", type=float, default=1.0)
    g.add_argument("--plane-count", type=int, default=2)
    g.add_argument("--plane-gap", type=float, default=0.5)


def _add_camera_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("camera")
    g.add_argument("--camera", help="camera config file (overrides the flags below)")
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--fov", type=float, default=40.0, help="horizontal FOV, degrees")
    g.add_argument("--t-near", type=float, default=1.0)
    g.add_argument("--t-far", type=float, default=10.0)


def _add_search_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("search")
    g.add_argument("--kernel-scale", type=float, default=2.0,
                   help="kernel radius in pixel-disc units")
    g.add_argument("--kernel-radius", type=float,
                   help="absolute kernel radius (overrides --kernel-scale)")
    g.add_argument("--approx-radius", action="store_true",
                   help="use the small-angle radius approximation")


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--k", type=int, default=8, help="neighbors per candidate")
    g.add_argument("--beta", type=float, default=SamplerConfig().beta)
    g.add_argument("--gamma", type=float, default=0.9)
    g.add_argument("--retention-mode", default="epsilon", choices=["epsilon", "tau"])
    g.add_argument("--epsilon", type=float, default=1e-4)
    g.add_argument("--tau-min", type=float, default=0.01)


def _load_cloud(args):
    if args.scene in ("ply", "csv"):
        if not args.input:
            raise SystemExit("--scene ply/csv requires --input")
        return load_ply(args.input) if args.scene == "ply" else load_csv(args.input)
    spec = scenes.SceneSpec(
        kind=args.scene, n=args.n, seed=args.seed, noise=args.noise,
        extent=args.extent, sphere_radius=args.sphere_radius,
        plane_count=args.plane_count, plane_gap=args.plane_gap)
    return scenes.generate_scene(spec)


def _load_camera(args):
    if args.camera:
        return load_camera(args.camera)
    return scenes.scene_camera(args.width, args.height, args.fov)


def _search_config(args, camera):
    return SearchConfig.for_camera(
        camera, kernel_radius=args.kernel_radius, scale=args.kernel_scale,
        use_approx_radius=args.approx_radius)


def _sampler_config(args):
    return SamplerConfig(k_neighbors=args.k, beta=args.beta, gamma=args.gamma,
                         retention_mode=args.retention_mode,
                         epsilon=args.epsilon, tau_min=args.tau_min)


def _cmd_bench(args) -> int:
    cloud = _load_cloud(args)
    camera = _load_camera(args)
    config = _search_config(args, camera)
    structures = []
    for entry in args.structure or ["all"]:
        for name in entry.split(","):
            if name == "all":
                structures.extend(bench.STRUCTURES)
            else:
                structures.append(name)
    try:
        records = bench.run_bench(
            cloud, camera, config, structures=structures, m_rays=args.rays,
            repeats=args.repeats, t_near=args.t_near, t_far=args.t_far,
            sampler_cfg=_sampler_config(args))
    except bench.FairnessError as exc:
        print(f"fairness gate: {exc}", file=sys.stderr)
        return 2
    for r in records:
        print(f"{r.structure:10s} n={r.n} m={r.m} build={r.build_ms:.3f}ms "
              f"query={r.query_ms:.3f}ms sample={r.sample_ms:.3f}ms "
              f"q_total={r.q_total} q_mean={r.q_mean:.2f}")
    if args.out:
        bench.emit_csv(records, args.out)
        print(f"wrote {args.out}")
    return 0


def _build_index(args):
    cloud = _load_cloud(args)
    camera = _load_camera(args)
    config = _search_config(args, camera)
    return hash_index.build(cloud, camera, config), camera, config


def _cmd_query(args) -> int:
    index, camera, config = _build_index(args)
    dirs, pixels = ray_grid(camera)
    i = args.v * camera.width + args.u
    if not (0 <= args.u < camera.width and 0 <= args.v < camera.height):
        raise SystemExit(f"pixel ({args.u}, {args.v}) outside {camera.width}x{camera.height}")
    ray = Ray(camera.origin, dirs[i], args.t_near, args.t_far, (args.u, args.v))
    result = hash_index.query(index, ray, config)
    oracle = baselines.brute_force_query(index.points, ray, camera, config,
                                         restrict_footprint=True)
    print(f"ray pixel=({args.u},{args.v}) matches={len(result)} "
          f"oracle_matches={len(oracle)}")
    print("point_id,t_proj,dist_perp")
    for j in range(len(result)):
        print(f"{int(result.point_ids[j])},{float(result.t_proj[j])!r},"
              f"{float(result.dist_perp[j])!r}")
    return 0


def _cmd_sample(args) -> int:
    index, camera, config = _build_index(args)
    sampler_cfg = _sampler_config(args)
    dirs, pixels = ray_grid(camera)
    m = dirs.shape[0] if args.rays is None else min(args.rays, dirs.shape[0])
    dirs, pixels = dirs[:m], pixels[:m]
    tn = np.full(m, args.t_near)
    tf = np.full(m, args.t_far)
    offsets, ids, t, dist, _, _ = hash_index.query_batch_arrays(
        index, pixels, dirs, tn, tf, config)
    slopes = radius_slopes(camera, pixels, config.kernel_radius, config.use_approx_radius)
    roff, rid, rt, rdist, rudf, ralpha, rw, _, _ = sampler.sample_batch_arrays(
        offsets, ids, t, dist, slopes, sampler_cfg, None)
    ray_ids = np.repeat(np.arange(m), np.diff(roff))
    sampler.write_samples_csv(args.out, ray_ids, rt, rudf, ralpha, rw, rid)
    print(f"wrote {args.out} ({rid.shape[0]} retained candidates over {m} rays)")
    return 0


def _cmd_render(args) -> int:
    index, camera, config = _build_index(args)
    sampler_cfg = _sampler_config(args)
    render_cfg = renderer.RenderConfig(
        mode="knp_blend" if args.mode == "knp" else "volume",
        background=tuple(args.background))
    rays = [
        Ray(camera.origin, d, args.t_near, args.t_far, (int(p[0]), int(p[1])))
        for d, p in zip(*ray_grid(camera))
    ]
    image = renderer.render(index, rays, config, sampler_cfg, render_cfg)
    renderer.write_ppm(image, args.out)
    print(f"wrote {args.out}")
    if args.depth_out:
        renderer.write_pgm16(image, args.depth_out)
        print(f"wrote {args.depth_out}")
    return 0


def _cmd_index_stats(args) -> int:
    index, _, _ = _build_index(args)
    hash_index.write_stats_csv(index, args.out)
    occupied = int(np.count_nonzero(index.table_count))
    print(f"wrote {args.out} ({occupied} occupied pixels, "
          f"{index.indexed_count}/{index.points.count} points indexed)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hashpoint",
        description="Hash-indexed point cloud search, sampling and rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time search structures on one workload")
    _add_scene_args(p)
    _add_camera_args(p)
    _add_search_args(p)
    _add_sampler_args(p)
    p.add_argument("--structure", action="append",
                   help="structure name or comma list (default: all)")
    p.add_argument("--rays", type=int, help="ray count (default: full frame)")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("query", help="debug-dump one ray's neighbors")
    _add_scene_args(p)
    _add_camera_args(p)
    _add_search_args(p)
    p.add_argument("--u", type=int, required=True)
    p.add_argument("--v", type=int, required=True)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("sample", help="dump retained sample candidates as CSV")
    _add_scene_args(p)
    _add_camera_args(p)
    _add_search_args(p)
    _add_sampler_args(p)
    p.add_argument("--rays", type=int, help="limit to the first N rays")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("render", help="render the scene to PPM (and depth PGM)")
    _add_scene_args(p)
    _add_camera_args(p)
    _add_search_args(p)
    _add_sampler_args(p)
    p.add_argument("--mode", default="volume", choices=["knp", "volume"])
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--out", required=True)
    p.add_argument("--depth-out")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("index-stats", help="dump per-pixel point counts as CSV")
    _add_scene_args(p)
    _add_camera_args(p)
    _add_search_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index_stats)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
