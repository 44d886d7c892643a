"""Generate golden fixtures for the browser viewer's parity tests.

Exports a small random model as a viewer bundle plus reference renders
from the core renderer, so the TypeScript CPU renderer can be checked
against the exact same data the viewer consumes:

  frontend/test/fixtures/bundle/      exported viewer bundle
  frontend/test/fixtures/renders.json poses + per-view render file names
  frontend/test/fixtures/render_*.bin raw f32 [H, W, 3] reference renders
  frontend/test/fixtures/sh_basis.json SH basis values at random directions

Two reference render sets are written per view: "quantized" renders the
dequantized checkpoint (what the viewer actually sees; should match the
TS renderer to filtering precision) and "core" renders the original
f32 checkpoint (the end-to-end fidelity bound of 2/255 applies).

Usage: python3 tools/make_viewer_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from planesoup.bundle_io import Checkpoint, dequantized_checkpoint, export_viewer
from planesoup.dynamic_renderer import DynamicLayers
from planesoup.geometry import CameraIntrinsics, PlaneGeometry, Pose, axis_angle_to_matrix
from planesoup.static_renderer import RenderRequest, StaticModel, render_static
from planesoup.textures import PlaneTexture, ShBasisDegree, sh_basis

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures"

N_PLANES = 8
TEX_SIZE = 32
DISP_SIZE = 8
DEGREES = ShBasisDegree(l_max_color=2, l_max_disp=1)
WIDTH, HEIGHT = 64, 40
N_VIEWS = 3
N_DYN_FRAMES = 2


def _random_plane(gen: torch.Generator) -> PlaneGeometry:
    z = float(torch.empty(1, dtype=torch.float64).uniform_(2.0, 5.0, generator=gen))
    center = torch.tensor([
        float(torch.empty(1).uniform_(-0.8, 0.8, generator=gen)),
        float(torch.empty(1).uniform_(-0.6, 0.6, generator=gen)), z],
        dtype=torch.float64)
    aa = torch.randn(3, generator=gen, dtype=torch.float64) * 0.3
    return PlaneGeometry(
        basis=axis_angle_to_matrix(aa), center=center,
        w=float(torch.empty(1).uniform_(1.0, 2.2, generator=gen)),
        h=float(torch.empty(1).uniform_(1.0, 2.2, generator=gen)))


def _random_texture(gen: torch.Generator) -> PlaneTexture:
    tex = PlaneTexture.zeros(DEGREES, size=TEX_SIZE, disp_size=DISP_SIZE)
    tex.color_sh.normal_(0.0, 0.25, generator=gen)
    tex.color_sh[..., 0].uniform_(0.1, 0.9, generator=gen)
    tex.alpha_logits.normal_(0.5, 2.0, generator=gen)
    tex.disp_sh.normal_(0.0, 0.4, generator=gen)
    return tex


def _jittered_pose(gen: torch.Generator, scale: float = 0.12) -> Pose:
    aa = torch.randn(3, generator=gen, dtype=torch.float64) * scale * 0.3
    tr = torch.randn(3, generator=gen, dtype=torch.float64) * scale
    return Pose(axis_angle_to_matrix(aa), tr)


def _dynamic_layers(gen: torch.Generator) -> DynamicLayers:
    """A couple of frames with a small soft blob of dynamic content."""
    rgb = torch.zeros(N_DYN_FRAMES, HEIGHT, WIDTH, 3)
    logits = torch.full((N_DYN_FRAMES, HEIGHT, WIDTH), -12.0)
    depth = torch.full((N_DYN_FRAMES, HEIGHT, WIDTH), 2.5)
    for t in range(N_DYN_FRAMES):
        cx, cy = 20 + 8 * t, 18
        for dy in range(-3, 4):
            for dx in range(-3, 4):
                r2 = dx * dx + dy * dy
                if r2 > 9:
                    continue
                logits[t, cy + dy, cx + dx] = 3.0 - 0.4 * r2
                rgb[t, cy + dy, cx + dx] = torch.tensor([0.9, 0.3 + 0.2 * t, 0.1])
    return DynamicLayers(rgb=rgb, mask_logits=logits, depth=depth)


def main() -> None:
    torch.set_num_threads(1)
    gen = torch.Generator().manual_seed(11)
    planes = [_random_plane(gen) for _ in range(N_PLANES)]
    textures = [_random_texture(gen) for _ in range(N_PLANES)]
    K = CameraIntrinsics(fx=WIDTH * 0.9, fy=WIDTH * 0.9, cx=WIDTH / 2,
                         cy=HEIGHT / 2, width=WIDTH, height=HEIGHT)
    poses = [Pose(torch.eye(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))]
    poses += [_jittered_pose(gen) for _ in range(N_VIEWS - 1)]

    ckpt = Checkpoint(
        planes=planes, textures=textures, sh_degrees=DEGREES,
        dynamic=_dynamic_layers(gen), config={},
        metadata={"intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                                 "width": K.width, "height": K.height}})

    bundle_dir = FIXTURE_DIR / "bundle"
    bundle_dir.mkdir(parents=True, exist_ok=True)
    report = export_viewer(ckpt, bundle_dir, intrinsics=K,
                           poses=[poses[0]] * N_DYN_FRAMES)
    print(f"export fidelity: max mean abs = {report['max_mean_abs']:.6f}")

    deq = dequantized_checkpoint(ckpt)
    model_q = StaticModel(deq.planes, deq.textures, deq.sh_degrees)
    model = StaticModel(planes, textures, DEGREES)
    views = []
    for i, pose in enumerate(poses):
        req = RenderRequest(K, pose)
        out_q = render_static(model_q, req)
        out_c = render_static(model, req)
        fq = f"render_quantized_{i}.bin"
        fc = f"render_core_{i}.bin"
        (FIXTURE_DIR / fq).write_bytes(
            out_q.color.to(torch.float32).numpy().astype("<f4").tobytes())
        (FIXTURE_DIR / fc).write_bytes(
            out_c.color.to(torch.float32).numpy().astype("<f4").tobytes())
        views.append({
            "pose": [round(float(x), 17) for x in pose.matrix3x4().reshape(-1)],
            "quantized": fq,
            "core": fc,
        })
    meta = {
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                       "width": K.width, "height": K.height},
        "views": views,
    }
    (FIXTURE_DIR / "renders.json").write_text(json.dumps(meta, indent=1))

    # SH basis spot checks at random unit directions, full degree 4
    dirs = torch.randn(16, 3, dtype=torch.float64, generator=gen)
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    basis = sh_basis(4, dirs)
    (FIXTURE_DIR / "sh_basis.json").write_text(json.dumps({
        "directions": dirs.numpy().tolist(),
        "values": basis.numpy().tolist(),
    }, indent=1))
    print(f"fixtures written to {FIXTURE_DIR}")


if __name__ == "__main__":
    main()
