"""Command-line interface.

Subcommands: synth (generate a ground-truth scene), reconstruct (run the
engine and fuse), eval (score a fused cloud against ground truth) and
dump-prior (region-map debugging output).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, save_config
from .edge_prior import build_region_prior, normalize_mono_depth
from .engine import run_pipeline
from .evalmetrics import evaluate
from .fusion import fuse_depth_maps
from .scene_io import (
    SceneParseError,
    load_scene,
    read_depth_map,
    read_point_cloud,
    write_depth_map,
    write_normal_map,
    write_point_cloud,
)
from .synth import SCENE_SPECS, generate_scene

logger = logging.getLogger("pdmvs")


class CliError(Exception):
    pass


def _read_scene_meta(scene_dir: Path) -> dict:
    meta_path = scene_dir / "scene.txt"
    meta = {}
    if meta_path.is_file():
        for line in meta_path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                meta[k] = v
    return meta


def _load_scene_dir(scene_dir: Path):
    cam_path = scene_dir / "cameras.txt"
    if not cam_path.is_file():
        raise CliError(f"no cameras.txt in {scene_dir}")
    cams, images = load_scene(cam_path, scene_dir / "images")
    return cams, images


def _load_mono_depths(mono_dir: Path, cams, names_hint=None):
    files = sorted(mono_dir.glob("*.pfm"))
    if len(files) != len(cams):
        raise CliError(
            f"{mono_dir}: expected {len(cams)} mono depth maps, found {len(files)}"
        )
    monos = []
    for i, path in enumerate(files):
        dm = read_depth_map(path)
        if dm.values.shape != (cams[i].height, cams[i].width):
            raise CliError(f"mono depth {path.name} does not match view {i} size")
        monos.append(normalize_mono_depth(dm.values))
    return monos


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    for name in ("seed", "iterations", "threads"):
        val = getattr(args, name, None)
        if val is not None:
            cfg = cfg.updated(**{name: val})
    return cfg


def cmd_synth(args) -> int:
    scene = generate_scene(
        args.spec, args.seed, width=args.width, height=args.height,
        n_views=args.views,
    )
    out = Path(args.out)
    scene.write_to_dir(out)
    print(f"wrote scene {args.spec!r} ({args.views} views) to {out}")
    return 0


def cmd_reconstruct(args) -> int:
    scene_dir = Path(args.scene)
    out_dir = Path(args.out)
    cfg = _resolve_config(args)
    meta = _read_scene_meta(scene_dir)
    if cfg.d_min <= 0 or cfg.d_max <= 0:
        if "d_min" in meta and "d_max" in meta:
            cfg = cfg.updated(d_min=float(meta["d_min"]), d_max=float(meta["d_max"]))
        else:
            raise CliError(
                "depth range unknown: set d_min/d_max in the config or scene.txt"
            )
    cams, images = _load_scene_dir(scene_dir)
    mono_dir = Path(args.mono_depth_dir) if args.mono_depth_dir else scene_dir / "mono_depth"
    monos = None
    if cfg.use_edge_prior:
        if not mono_dir.is_dir():
            raise CliError(
                f"mono depth directory {mono_dir} not found; pass --mono-depth-dir "
                "or disable the edge prior"
            )
        monos = _load_mono_depths(mono_dir, cams)

    if args.dry_run:
        print(f"scene: {scene_dir} ({len(cams)} views)")
        for f, v in sorted(vars(cfg).items()):
            print(f"{f} = {v}")
        return 0

    if cfg.threads > 0:
        try:
            import numba

            numba.set_num_threads(cfg.threads)
        except ImportError:
            pass

    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    results = run_pipeline(images, cams, monos, cfg)
    for i, res in enumerate(results):
        write_depth_map(res.depth, out_dir / f"depth_{i:04d}.pfm")
        write_normal_map(res.normals.astype(np.float32), out_dir / f"normal_{i:04d}.pfm")
        if args.dump_visibility:
            vis_dir = out_dir / "visibility"
            vis_dir.mkdir(exist_ok=True)
            np.save(vis_dir / f"weights_{i:04d}.npy", res.weights)
        if args.dump_regions and res.region_map is not None:
            reg_dir = out_dir / "regions"
            reg_dir.mkdir(exist_ok=True)
            np.save(reg_dir / f"labels_{i:04d}.npy", res.region_map.labels)
    cloud = fuse_depth_maps(
        [r.depth for r in results], [r.normals for r in results], cams, cfg, images
    )
    write_point_cloud(cloud, out_dir / "fused.ply")
    elapsed = time.time() - t0
    save_config(cfg, out_dir / "config_used.txt")
    manifest = [
        f"pdmvs = {__version__}",
        f"numpy = {np.__version__}",
        f"scene = {scene_dir}",
        f"views = {len(cams)}",
        f"fused_points = {len(cloud)}",
        f"elapsed_seconds = {elapsed:.1f}",
    ]
    try:
        import numba

        manifest.insert(2, f"numba = {numba.__version__}")
    except ImportError:
        manifest.insert(2, "numba = disabled")
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    print(f"reconstructed {len(cams)} views in {elapsed:.1f}s; "
          f"{len(cloud)} fused points -> {out_dir / 'fused.ply'}")
    return 0


def cmd_eval(args) -> int:
    scene_dir = Path(args.scene)
    gt_path = scene_dir / "gt_cloud.ply"
    if not gt_path.is_file():
        raise CliError(f"no gt_cloud.ply in {scene_dir}")
    gt = read_point_cloud(gt_path)
    recon = read_point_cloud(args.ply)
    if args.tau is not None:
        if args.tau <= 0:
            raise CliError("--tau must be positive")
        tau = args.tau
    else:
        meta = _read_scene_meta(scene_dir)
        if "diameter" not in meta:
            raise CliError("scene.txt lacks a diameter; pass --tau explicitly")
        tau = RunConfig().tau_eval_fraction * float(meta["diameter"])
    report = evaluate(recon, gt, tau)
    print(f"tau          = {report.tau:.6g}")
    print(f"accuracy     = {report.accuracy:.2f}")
    print(f"completeness = {report.completeness:.2f}")
    print(f"f1           = {report.f1:.2f}")
    return 0


def cmd_dump_prior(args) -> int:
    scene_dir = Path(args.scene)
    out_dir = Path(args.out)
    cfg = _resolve_config(args)
    cams, images = _load_scene_dir(scene_dir)
    mono_dir = Path(args.mono_depth_dir) if args.mono_depth_dir else scene_dir / "mono_depth"
    monos = _load_mono_depths(mono_dir, cams)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (img, mono) in enumerate(zip(images, monos)):
        rm = build_region_prior(mono, img.astype(np.float64), cfg, seed=cfg.seed + i)
        np.save(out_dir / f"labels_{i:04d}.npy", rm.labels)
        lines = ["id pixels inlier_ratio nx ny nz offset"]
        for rid in sorted(rm.records):
            rec = rm.records[rid]
            if rec.normal is None:
                lines.append(f"{rid} {rec.pixel_count} 0 - - - -")
            else:
                n = rec.normal
                lines.append(
                    f"{rid} {rec.pixel_count} {rec.inlier_ratio:.4f} "
                    f"{n[0]:.5f} {n[1]:.5f} {n[2]:.5f} {rec.offset:.5f}"
                )
        (out_dir / f"regions_{i:04d}.txt").write_text("\n".join(lines) + "\n")
        print(f"view {i}: {len(rm.records)} regions")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdmvs", description=__doc__)
    p.add_argument("--verbose", action="store_true", help="info-level logging")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic ground-truth scene")
    ps.add_argument("--spec", required=True, choices=SCENE_SPECS)
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--width", type=int, default=640)
    ps.add_argument("--height", type=int, default=480)
    ps.add_argument("--views", type=int, default=5)
    ps.set_defaults(func=cmd_synth)

    pr = sub.add_parser("reconstruct", help="run the full pipeline on a scene")
    pr.add_argument("--scene", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--config")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--iterations", type=int)
    pr.add_argument("--threads", type=int)
    pr.add_argument("--mono-depth-dir")
    pr.add_argument("--dump-visibility", action="store_true")
    pr.add_argument("--dump-regions", action="store_true")
    pr.add_argument("--dry-run", action="store_true")
    pr.set_defaults(func=cmd_reconstruct)

    pe = sub.add_parser("eval", help="score a fused cloud against ground truth")
    pe.add_argument("--ply", required=True)
    pe.add_argument("--scene", required=True)
    pe.add_argument("--tau", type=float)
    pe.set_defaults(func=cmd_eval)

    pd = sub.add_parser("dump-prior", help="write region maps for inspection")
    pd.add_argument("--scene", required=True)
    pd.add_argument("--out", required=True)
    pd.add_argument("--config")
    pd.add_argument("--seed", type=int)
    pd.add_argument("--mono-depth-dir")
    pd.set_defaults(func=cmd_dump_prior)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, SceneParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
