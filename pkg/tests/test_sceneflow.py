"""Scene-flow grids: trilinear sampling, the four regularization terms, and
a miniature optimization against an analytic linear motion."""

import torch

from planesoup.geometry import Pose, project_point
from planesoup.losses import LossWeights
from planesoup.sceneflow import (SceneFlowGrids, _dynamic_points,
                                 evaluate_scene_flow_losses)
from tests.conftest import small_intrinsics


def _setup(n=4, h=12, w=16, depth_val=4.0, mask_all=True):
    k = small_intrinsics(w, h)
    poses = [Pose.identity() for _ in range(n)]
    depths = torch.full((n, h, w), depth_val)
    masks = torch.ones(n, h, w) if mask_all else torch.zeros(n, h, w)
    return k, poses, depths, masks


def test_zeros_shapes_respect_aspect():
    g = SceneFlowGrids.zeros(5, 90, 160, grid=16)
    assert g.fwd.shape == (5, 9, 16, 3)
    assert g.bwd.shape == g.fwd.shape
    assert (g.fwd == 0).all()


def test_sample_constant_field_everywhere():
    g = SceneFlowGrids.zeros(3, 20, 30, grid=8)
    g.fwd += torch.tensor([0.1, -0.2, 0.3])
    px = torch.tensor([0.5, 10.0, 29.5])
    py = torch.tensor([0.5, 5.0, 19.5])
    for t in (0.0, 0.5, 1.0, 2.0):
        m = g.forward_motion(t, px, py)
        assert torch.allclose(m, torch.tensor([0.1, -0.2, 0.3]).expand(3, 3),
                              atol=1e-6)


def test_sample_interpolates_between_frames():
    g = SceneFlowGrids.zeros(2, 10, 10, grid=4)
    g.fwd[0] += 1.0
    g.fwd[1] += 3.0
    px = torch.tensor([5.0])
    py = torch.tensor([5.0])
    mid = g.forward_motion(0.5, px, py)
    assert torch.allclose(mid, torch.full((1, 3), 2.0), atol=1e-6)


def test_dynamic_points_masking():
    k, poses, depths, masks = _setup(mask_all=False)
    pix, pts = _dynamic_points(depths[0], masks[0], k, poses[0])
    assert pix.numel() == 0
    masks[0, 4, 6] = 1.0
    pix, pts = _dynamic_points(depths[0], masks[0], k, poses[0])
    assert pix.shape[0] == 1
    assert float(pts[0, 2]) == 4.0  # identity pose: z is the depth


def test_losses_zero_for_zero_motion_and_zero_flow():
    k, poses, depths, masks = _setup()
    g = SceneFlowGrids.zeros(4, k.height, k.width, grid=8)
    flows = {(t, 1): torch.zeros(k.height, k.width, 2) for t in range(3)}
    val = evaluate_scene_flow_losses(g, depths, poses, k, flows, masks,
                                     LossWeights())
    assert float(val) < 1e-6  # f32 projection round-off only


def test_flow_term_penalizes_motion_mismatch():
    k, poses, depths, masks = _setup()
    g = SceneFlowGrids.zeros(4, k.height, k.width, grid=8)
    # grids say "no motion" but the optical flow says 2 px to the right
    flows = {(t, 1): torch.cat([torch.full((k.height, k.width, 1), 2.0),
                                torch.zeros(k.height, k.width, 1)], dim=-1)
             for t in range(3)}
    w = LossWeights(beta_cycle=0.0, beta_depth=0.0, beta_smooth=0.0)
    val = evaluate_scene_flow_losses(g, depths, poses, k, flows, masks, w)
    assert abs(float(val) - 2.0) < 1e-5  # mean EPE of 2 px per pair


def test_cycle_term_zero_when_fields_invert():
    k, poses, depths, masks = _setup()
    g = SceneFlowGrids.zeros(4, k.height, k.width, grid=8)
    motion = torch.tensor([0.05, 0.0, 0.0])
    g.fwd += motion
    g.bwd -= motion
    w = LossWeights(beta_depth=0.0, beta_smooth=0.0)
    flows = {}
    val = evaluate_scene_flow_losses(g, depths, poses, k, flows, masks, w)
    assert float(val) < 1e-6


def test_gradients_reach_grids():
    k, poses, depths, masks = _setup()
    g = SceneFlowGrids.zeros(4, k.height, k.width, grid=8)
    g.fwd.requires_grad_(True)
    g.bwd.requires_grad_(True)
    flows = {(t, 1): torch.full((k.height, k.width, 2), 1.0) for t in range(3)}
    val = evaluate_scene_flow_losses(g, depths, poses, k, flows, masks,
                                     LossWeights())
    val.backward()
    assert g.fwd.grad is not None and float(g.fwd.grad.abs().sum()) > 0
    assert g.bwd.grad is not None


def test_optimization_drives_epe_down():
    # constant world motion (0.08, 0, 0) per frame at depth 4 projects to a
    # constant optical flow; a short Adam run must fit it well below 0.1 px
    k, poses, depths, masks = _setup(n=3)
    motion = torch.tensor([0.08, 0.0, 0.0])
    flows = {}
    pix0, pts0 = _dynamic_points(depths[0], masks[0], k, poses[0], stride=1)
    for t in range(2):
        proj, _ = project_point(k, poses[t + 1],
                                torch.cat([pts0 + (t + 1) * motion], dim=0))
        base, _ = project_point(k, poses[t], pts0 + t * motion)
        f = torch.zeros(k.height, k.width, 2)
        f.reshape(-1, 2)[:] = (proj - base).to(torch.float32)
        flows[(t, 1)] = f
    g = SceneFlowGrids.zeros(3, k.height, k.width, grid=8)
    g.fwd.requires_grad_(True)
    g.bwd.requires_grad_(True)
    w = LossWeights(scene_flow_enabled=True)
    opt = torch.optim.Adam([g.fwd, g.bwd], lr=1e-2)
    for _ in range(150):
        opt.zero_grad()
        loss = evaluate_scene_flow_losses(g, depths, poses, k, flows, masks, w)
        loss.backward()
        opt.step()
    with torch.no_grad():
        pix, pts = _dynamic_points(depths[0], masks[0], k, poses[0])
        m = g.forward_motion(0, pix[:, 0], pix[:, 1])
        proj, _ = project_point(k, poses[1], pts + m)
        gt = flows[(0, 1)][pix[:, 1].long(), pix[:, 0].long()]
        epe = torch.linalg.norm((proj - pix) - gt, dim=-1).mean()
    assert float(epe) < 0.1
