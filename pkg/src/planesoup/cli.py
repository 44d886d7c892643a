"""Command-line interface: synth, fit, optimize, render, export, gradcheck,
bench. Global flags: --config <json>, --seed, --threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch


def _apply_config(obj, overrides: dict):
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise SystemExit(f"unknown config key '{key}' for {type(obj).__name__}")
        setattr(obj, key, value)
    return obj


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _read_camera_path(path: str):
    """Line-per-pose text: timestamp then 12 values of the 3x4 world->camera
    matrix, row-major, whitespace separated. '#' starts a comment."""
    from .bundle_io import _check_pose_matrix

    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) != 13:
            raise SystemExit(f"{path}:{lineno}: expected 13 values, got {len(vals)}")
        pose = _check_pose_matrix(np.array(vals[1:]).reshape(3, 4),
                                  f"{path}:{lineno}")
        entries.append((vals[0], pose))
    return entries


def cmd_synth(args, config):
    from .bundle_io import save_bundle
    from .scene_synth import SCENES, generate_bundle, save_groundtruth

    maker = SCENES.get(args.scene)
    if maker is None:
        raise SystemExit(f"unknown scene '{args.scene}'; choose from {sorted(SCENES)}")
    kwargs = dict(config.get("synth", {}))
    if args.frames:
        kwargs["n_frames"] = args.frames
    if args.width:
        kwargs["width"] = args.width
    if args.height:
        kwargs["height"] = args.height
    if args.seed is not None:
        kwargs["seed"] = args.seed
    scene = maker(**kwargs)
    bundle, gt = generate_bundle(scene)
    out = Path(args.out)
    save_bundle(bundle, out)
    if args.gt:
        save_groundtruth(gt, out / "groundtruth")
    print(f"wrote {scene.name}: {bundle.n_frames} frames "
          f"{bundle.intrinsics.width}x{bundle.intrinsics.height} -> {out}")


def _bundle_metadata(bundle):
    k = bundle.intrinsics
    return {
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                       "width": k.width, "height": k.height},
        "poses": [[float(x) for x in p.matrix3x4().reshape(-1)]
                  for p in bundle.poses],
    }


def cmd_fit(args, config):
    from .bundle_io import Checkpoint, load_bundle, save_checkpoint
    from .optimizer import TrainConfig, init_textures
    from .plane_fitting import (FittingConfig, build_static_cloud, fit_planes,
                                scene_scale_of)

    bundle = load_bundle(args.bundle)
    fit_cfg = _apply_config(FittingConfig(), config.get("fit", {}))
    if args.planes:
        fit_cfg.n_planes = args.planes
    if args.iterations:
        fit_cfg.iterations = args.iterations
    if args.seed is not None:
        fit_cfg.seed = args.seed
    cloud = build_static_cloud(bundle, fit_cfg)
    scale = scene_scale_of(bundle, fit_cfg.keyframe_stride)
    planes = fit_planes(cloud, fit_cfg, scene_scale=scale)
    train_cfg = _apply_config(TrainConfig(), config.get("train", {}))
    textures = init_textures(bundle, planes, train_cfg,
                             keyframe_stride=fit_cfg.keyframe_stride)
    ckpt = Checkpoint(planes=planes, textures=textures,
                      sh_degrees=train_cfg.sh_degrees, dynamic=None,
                      config={"fit": vars(fit_cfg) | {"scene_scale": scale}},
                      metadata=_bundle_metadata(bundle))
    ckpt.config["fit"] = {k: v for k, v in ckpt.config["fit"].items()
                          if isinstance(v, (int, float, str, bool))}
    save_checkpoint(ckpt, args.out)
    print(f"fitted {len(planes)} planes over {len(cloud)} points -> {args.out}")


def cmd_optimize(args, config):
    from .bundle_io import Checkpoint, load_bundle, load_checkpoint, save_checkpoint
    from .optimizer import TrainConfig, init_dynamic, train
    from .static_renderer import StaticModel

    bundle = load_bundle(args.bundle)
    cfg = _apply_config(TrainConfig(), config.get("train", {}))
    if args.iterations:
        cfg.iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    init = load_checkpoint(args.init)
    static_init = StaticModel(init.planes, init.textures, init.sh_degrees)
    dyn_init = init.dynamic
    if dyn_init is None and bool(bundle.masks.any()):
        dyn_init = init_dynamic(bundle)
    result = train(bundle, static_init, dyn_init, cfg)
    ckpt = Checkpoint(planes=result.model.planes, textures=result.model.textures,
                      sh_degrees=result.model.sh_degrees, dynamic=result.dynamic,
                      config={"train": {k: v for k, v in vars(cfg).items()
                                        if isinstance(v, (int, float, str, bool))}},
                      metadata=init.metadata | {"metrics": result.metrics[-1:]})
    save_checkpoint(ckpt, args.out)
    last = result.metrics[-1] if result.metrics else {}
    print(f"optimized {cfg.iterations} iterations "
          f"(final total loss {last.get('total', float('nan')):.4f}) -> {args.out}")


def cmd_render(args, config):
    from PIL import Image

    from .bundle_io import _check_pose_matrix, load_checkpoint
    from .dynamic_renderer import SplatConfig
    from .geometry import CameraIntrinsics
    from .pipeline import render_full
    from .static_renderer import pack_model

    ckpt = load_checkpoint(args.checkpoint)
    meta_k = ckpt.metadata.get("intrinsics")
    if meta_k is None:
        raise SystemExit("checkpoint has no intrinsics metadata")
    k = CameraIntrinsics(**meta_k)
    src_poses = [_check_pose_matrix(np.array(p).reshape(3, 4), f"metadata pose {i}")
                 for i, p in enumerate(ckpt.metadata.get("poses", []))]
    if args.path:
        targets = _read_camera_path(args.path)
    else:
        targets = [(float(t), p) for t, p in enumerate(src_poses)]
    if not targets:
        raise SystemExit("no poses to render")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = ckpt.static_model()
    cfg = SplatConfig(neighbor_offsets=(-1, 1))
    n_dyn = len(ckpt.dynamic) if ckpt.dynamic is not None else 0
    with torch.no_grad():
        model = pack_model(model, atlas=True)
        for i, (stamp, pose) in enumerate(targets):
            t = int(round(stamp))
            t = min(max(t, 0), max(n_dyn - 1, 0))
            res = render_full(model, ckpt.dynamic, {}, src_poses or [pose], k,
                              t, pose, k, cfg, validate=(i == 0))
            img = (res.color.clamp(0, 1).numpy() * 255).round().astype(np.uint8)
            Image.fromarray(img).save(out / f"render_{i:04d}.png")
    print(f"rendered {len(targets)} views -> {out}")


def cmd_export(args, config):
    from .bundle_io import export_viewer, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    report = export_viewer(ckpt, args.out)
    views = report.get("views", [])
    worst = max(views) if views else 0.0
    print(f"exported viewer bundle -> {args.out} "
          f"(fidelity worst mean abs err {worst:.6f} over {len(views)} probe views)")


def cmd_gradcheck(args, config):
    from .autodiff import run_suite

    reports = run_suite(n_samples=args.samples, seed=args.seed or 0)
    failed = False
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.kernel}: max rel err {r.max_rel_err:.2e} "
              f"({r.n_checked} checked, {r.n_kink_excluded} kink-adjacent "
              f"excluded, {r.seconds:.1f}s)")
        if not r.passed:
            failed = True
            for sample, coord, err in r.failures[:5]:
                print(f"    sample {sample} coord {coord}: rel err {err:.2e}")
    sys.exit(1 if failed else 0)


def cmd_bench(args, config):
    from .bundle_io import bench, load_checkpoint
    from .geometry import CameraIntrinsics, Pose
    from .scene_synth import bench_plane_model

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model = ckpt.static_model()
        meta_k = ckpt.metadata.get("intrinsics")
        k = CameraIntrinsics(**meta_k) if meta_k else CameraIntrinsics(
            args.width, args.width, args.width / 2, args.height / 2,
            args.width, args.height)
        from .bundle_io import _check_pose_matrix
        poses = [_check_pose_matrix(np.array(p).reshape(3, 4), "metadata")
                 for p in ckpt.metadata.get("poses", [])] or [Pose.identity()]
        dynamic = ckpt.dynamic
    else:
        # focal length = width, so the frustum at z=4 is 4.0 wide and
        # 4.0 * height / width tall
        model = bench_plane_model(args.planes, args.texture_size,
                                  fov_height=4.0 * args.height / args.width,
                                  seed=args.seed or 7)
        k = CameraIntrinsics(args.width, args.width, args.width / 2,
                             args.height / 2, args.width, args.height)
        poses = [Pose.identity()]
        dynamic = None
    report = bench(model, dynamic, k, poses, n_frames=args.frames)
    print(json.dumps(report, indent=1, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planesoup",
                                description="soup-of-planes video representation")
    p.add_argument("--config", help="JSON config file with per-command sections")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene bundle")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--gt", action="store_true", help="also write ground truth")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("fit", help="fit the plane soup to a bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--planes", type=int)
    s.add_argument("--iterations", type=int)
    s.set_defaults(fn=cmd_fit)

    s = sub.add_parser("optimize", help="optimize textures/dynamic layers")
    s.add_argument("--bundle", required=True)
    s.add_argument("--init", required=True, help="checkpoint from `fit`")
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int)
    s.set_defaults(fn=cmd_optimize)

    s = sub.add_parser("render", help="render a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--path", help="camera path file (timestamp + 3x4 pose per line)")
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("export", help="export a viewer bundle")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_export)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--samples", type=int, default=25)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("bench", help="render benchmark")
    s.add_argument("--checkpoint")
    s.add_argument("--planes", type=int, default=64)
    s.add_argument("--width", type=int, default=480)
    s.add_argument("--height", type=int, default=270)
    s.add_argument("--texture-size", type=int, default=128, dest="texture_size")
    s.add_argument("--frames", type=int, default=100)
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    if args.threads:
        torch.set_num_threads(args.threads)
    config = _load_config(args.config)
    args.fn(args, config)


if __name__ == "__main__":
    main()
