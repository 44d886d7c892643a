"""Synthetic scene generators: bundle validity, analytic flow consistency,
height-field ray marching, and ground-truth bookkeeping."""

import math

import pytest
import torch

from planesoup.geometry import Pose, project_point, unproject_pixel
from planesoup.scene_synth import (SCENES, DynamicObject, bench_plane_model,
                                   generate_bundle, render_novel,
                                   save_groundtruth)


@pytest.fixture(scope="module")
def mover_small():
    scene = SCENES["mover"](n_frames=6, width=80, height=45)
    bundle, gt = generate_bundle(scene)
    return scene, bundle, gt


def test_all_scenes_produce_valid_bundles():
    for name, make in SCENES.items():
        scene = make(n_frames=3, width=40, height=24)
        bundle, gt = generate_bundle(scene, flow_offsets=(-1, 1))
        bundle.validate()
        assert bundle.frames.shape == (3, 24, 40, 3)
        assert float(bundle.frames.min()) >= 0.0
        assert float(bundle.frames.max()) <= 1.0
        finite = bundle.depths[torch.isfinite(bundle.depths)]
        assert (finite > 0).all(), name


def test_dynamic_mask_only_for_dynamic_scenes():
    static = SCENES["flatland"](n_frames=3, width=40, height=24)
    b_static, _ = generate_bundle(static)
    assert not bool(b_static.masks.any())
    dyn = SCENES["mover"](n_frames=3, width=40, height=24)
    b_dyn, _ = generate_bundle(dyn)
    assert bool(b_dyn.masks.any())


def test_flows_match_reprojection_on_static_scene():
    # for static content, flow t -> t+1 equals the reprojection of the
    # unprojected depth into the next camera
    scene = SCENES["flatland"](n_frames=3, width=60, height=34)
    bundle, _ = generate_bundle(scene, flow_offsets=(1,))
    t = 0
    k = bundle.intrinsics
    h, w = k.height, k.width
    flow = bundle.flows[(t, 1)]
    depth = bundle.depths[t]
    gy, gx = torch.meshgrid(torch.arange(h, dtype=torch.float64) + 0.5,
                            torch.arange(w, dtype=torch.float64) + 0.5,
                            indexing="ij")
    pix = torch.stack([gx, gy], dim=-1).reshape(-1, 2)
    d = depth.reshape(-1).to(torch.float64)
    ok = torch.isfinite(d)
    pts = unproject_pixel(k, bundle.poses[t], pix[ok], d[ok])
    proj, _ = project_point(k, bundle.poses[t + 1], pts)
    expect = (proj - pix[ok]).to(torch.float32)
    got = flow.reshape(-1, 2)[ok]
    assert float((got - expect).abs().max()) < 1e-3


def test_mover_flow_tracks_object(mover_small):
    scene, bundle, gt = mover_small
    obj = scene.dynamic_objects[0]
    t = 2
    off = obj.offset_between(t, t + 1)
    assert float(off[0]) > 0  # the mover travels +x
    mask = bundle.masks[t]
    assert bool(mask.any())
    flow = bundle.flows[(t, 1)]
    # inside the dynamic mask, horizontal flow reflects object + camera motion
    # and differs from the static background flow around it
    fg = flow[mask][:, 0].median()
    bg = flow[~mask][:, 0].median()
    assert float((fg - bg).abs()) > 0.5


def test_heightfield_depth_within_amplitude():
    scene = SCENES["bumpy"](n_frames=2, width=60, height=34, amplitude=0.3)
    bundle, gt = generate_bundle(scene)
    # depth along the bumpy quad stays within amplitude of the base plane
    quad = scene.static_surfaces[1]
    depth = bundle.depths[0]
    pose = bundle.poses[0]
    k = bundle.intrinsics
    h, w = k.height, k.width
    gy, gx = torch.meshgrid(torch.arange(h, dtype=torch.float64) + 0.5,
                            torch.arange(w, dtype=torch.float64) + 0.5,
                            indexing="ij")
    pix = torch.stack([gx, gy], dim=-1).reshape(-1, 2)
    d = depth.reshape(-1).to(torch.float64)
    ok = torch.isfinite(d)
    pts = unproject_pixel(k, pose, pix[ok], d[ok])
    from planesoup.geometry import to_plane_coords

    local = to_plane_coords(quad.plane, pts)
    on_quad = (local[:, 0].abs() < quad.plane.w / 2 * 0.95) \
        & (local[:, 1].abs() < quad.plane.h / 2 * 0.95) \
        & (local[:, 2].abs() < 0.5)
    assert bool(on_quad.any())
    # small slack for the ray-march root-finding tolerance
    assert float(local[on_quad, 2].abs().max()) <= 0.3 + 1e-3


def test_groundtruth_plane_params_cover_surfaces():
    scene = SCENES["box6"](n_frames=2, width=40, height=30)
    _, gt = generate_bundle(scene)
    assert len(gt.plane_params) == len(scene.static_surfaces)
    for p, s in zip(gt.plane_params, scene.static_surfaces):
        assert float((p.normal - s.plane.normal).abs().max()) < 1e-12


def test_generate_bundle_novel_poses(mover_small):
    scene, _, _ = mover_small
    from planesoup.scene_synth import _pose_lookat

    novel = [_pose_lookat((0.1, 0.0, 0.0)), _pose_lookat((-0.1, 0.0, 0.0))]
    _, gt = generate_bundle(scene, novel_poses=novel)
    assert len(gt.novel_images) == 2
    assert gt.novel_images[0].shape == (45, 80, 3)
    assert len(gt.novel_masks) == 2


def test_render_novel_at_training_pose_matches_frame(mover_small):
    scene, bundle, gt = mover_small
    rgb, depth, mask = render_novel(scene, scene.poses[1], 1.0)
    assert float((rgb - bundle.frames[1]).abs().max()) < 1e-5
    finite = torch.isfinite(depth) & torch.isfinite(bundle.depths[1])
    assert float((depth[finite] - bundle.depths[1][finite]).abs().max()) < 1e-5


def test_save_groundtruth_writes_files(tmp_path, mover_small):
    scene, _, _ = mover_small
    from planesoup.scene_synth import _pose_lookat

    _, gt = generate_bundle(scene, novel_poses=[_pose_lookat((0.1, 0, 0))])
    save_groundtruth(gt, tmp_path / "gt")
    assert (tmp_path / "gt/novel_depth_0000.psdp").exists()


def test_bench_plane_model_layout():
    model = bench_plane_model(n_planes=32, texture_size=32, seed=1)
    assert len(model.planes) == 32
    assert model.textures[0].size == 32
    # all planes live in front of the z=0 camera plane
    for p in model.planes:
        assert float(p.center[2]) > 0
