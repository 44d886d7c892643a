"""Static plane renderer vs the per-pixel numpy oracle, plus fragment
sorting/compositing invariants and the packed/atlas fast paths."""

import numpy as np
import pytest
import torch

from planesoup.geometry import Pose
from planesoup.scene_synth import oracle_render
from planesoup.static_renderer import (DEPTH_SENTINEL, FragmentBuffer,
                                       RenderRequest, StaticModel, composite,
                                       pack_model, rasterize_planes,
                                       render_static, sort_fragments)
from planesoup.textures import ShBasisDegree
from tests.conftest import (jittered_pose, random_model, random_texture,
                            small_intrinsics)


def _request(seed=0, width=48, height=32):
    gen = torch.Generator().manual_seed(seed + 100)
    return RenderRequest(small_intrinsics(width, height), jittered_pose(gen))


def test_matches_oracle_f64(model16):
    req = _request(1)
    out = render_static(model16, req, dtype=torch.float64)
    ref_rgb, ref_depth, ref_acc = oracle_render(model16, req.intrinsics,
                                                req.pose)
    assert float((out.color - ref_rgb).abs().max()) < 1e-9
    finite = torch.isfinite(ref_depth)
    assert float((out.depth[finite] - ref_depth[finite]).abs().max()) < 1e-9
    assert torch.isinf(out.depth[~finite]).all()
    assert float((out.alpha - ref_acc).abs().max()) < 1e-9


def test_matches_oracle_f32(model16):
    req = _request(2)
    out = render_static(model16, req, dtype=torch.float32)
    ref_rgb, _, _ = oracle_render(model16, req.intrinsics, req.pose)
    assert float((out.color.double() - ref_rgb).abs().max()) < 1e-4


def test_packed_path_matches_unpacked(model16):
    req = _request(3)
    a = render_static(model16, req, dtype=torch.float64)
    b = render_static(pack_model(model16), req, dtype=torch.float64)
    assert (a.color - b.color).abs().max() < 1e-12
    fa, fb = torch.isfinite(a.depth), torch.isfinite(b.depth)
    assert torch.equal(fa, fb)
    assert (a.depth[fa] - b.depth[fb]).abs().max() < 1e-12


def test_atlas_path_matches_loop_f32(model16):
    req = _request(4)
    a = render_static(model16, req, dtype=torch.float32)
    with torch.no_grad():
        b = render_static(pack_model(model16, atlas=True), req,
                          dtype=torch.float32)
    assert (a.color - b.color).abs().max() < 1e-4


def test_background_fill():
    model = StaticModel([], [], ShBasisDegree())
    req = _request(5)
    out = render_static(model, req, background=(0.2, 0.4, 0.6))
    assert torch.allclose(out.color[..., 0], torch.full_like(out.color[..., 0], 0.2))
    assert torch.allclose(out.color[..., 2], torch.full_like(out.color[..., 2], 0.6))
    assert (out.depth == DEPTH_SENTINEL).all()
    assert (out.alpha == 0).all()


def test_behind_camera_planes_invisible(model16):
    req = _request(6)
    base = render_static(model16, req, dtype=torch.float64)
    behind = random_model(seed=77, n_planes=4)
    for p in behind.planes:
        object.__setattr__(p, "center",
                           p.center - torch.tensor([0.0, 0.0, 20.0],
                                                   dtype=torch.float64))
    merged = StaticModel(model16.planes + behind.planes,
                         model16.textures + behind.textures,
                         model16.sh_degrees)
    out = render_static(merged, req, dtype=torch.float64)
    assert (out.color - base.color).abs().max() < 1e-12


def test_sort_fragments_orders_back_to_front(model16):
    req = _request(7)
    frags = rasterize_planes(model16, req, dtype=torch.float64)
    sorted_frags = sort_fragments(frags)
    d = sorted_frags.depth.clone()
    d[~sorted_frags.valid] = float("-inf")  # empty slots may hold +inf
    # along the slot axis, valid depths must be non-increasing (far to near)
    dd = d[:-1] - d[1:]
    both = sorted_frags.valid[:-1] & sorted_frags.valid[1:]
    assert float(dd[both].min()) >= 0.0


def test_sort_fragments_presorted_early_return(model16):
    req = _request(8)
    frags = rasterize_planes(model16, req, dtype=torch.float64)
    s1 = sort_fragments(frags)
    s1.sorted = True
    s2 = sort_fragments(s1)
    assert s2 is s1


def test_composite_matches_manual_over():
    # hand-built two-fragment buffer: out = c_near*a_near + c_far*a_far*(1-a_near)
    depth = torch.tensor([[5.0], [2.0]], dtype=torch.float64)
    rgb = torch.tensor([[[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]],
                       dtype=torch.float64)
    alpha = torch.tensor([[0.5], [0.25]], dtype=torch.float64)
    valid = torch.ones(2, 1, dtype=torch.bool)
    frags = FragmentBuffer(depth=depth, rgb=rgb, alpha=alpha, valid=valid,
                           height=1, width=1, sorted=True)
    color, _, acc = composite(frags)
    expect_r = 0.25 * 0.0 + (1 - 0.25) * 1.0 * 0.5
    expect_g = 0.25 * 1.0
    assert abs(float(color[0, 0, 0]) - expect_r) < 1e-12
    assert abs(float(color[0, 0, 1]) - expect_g) < 1e-12
    assert abs(float(acc[0, 0]) - (0.25 + 0.5 * 0.75)) < 1e-12


def test_composite_depth_is_alpha_weighted_expectation():
    depth = torch.tensor([[4.0], [2.0]], dtype=torch.float64)
    rgb = torch.zeros(2, 1, 3, dtype=torch.float64)
    alpha = torch.tensor([[0.6], [0.5]], dtype=torch.float64)
    valid = torch.ones(2, 1, dtype=torch.bool)
    frags = FragmentBuffer(depth=depth, rgb=rgb, alpha=alpha, valid=valid,
                           height=1, width=1, sorted=True)
    _, d, _ = composite(frags)
    w_near = 0.5
    w_far = 0.6 * (1 - 0.5)
    expect = (w_near * 2.0 + w_far * 4.0) / (w_near + w_far)
    assert abs(float(d[0, 0]) - expect) < 1e-12


def test_fully_transparent_pixel_has_sentinel_depth():
    depth = torch.tensor([[3.0]], dtype=torch.float64)
    rgb = torch.zeros(1, 1, 3, dtype=torch.float64)
    alpha = torch.tensor([[1e-6]], dtype=torch.float64)  # below the floor
    valid = torch.ones(1, 1, dtype=torch.bool)
    frags = FragmentBuffer(depth=depth, rgb=rgb, alpha=alpha, valid=valid,
                           height=1, width=1, sorted=True)
    _, d, _ = composite(frags)
    assert float(d[0, 0]) == DEPTH_SENTINEL


def test_validate_rejects_nonfinite_texture(model16):
    req = _request(9)
    model16.textures[3].color_sh[0, 0, 0, 0] = float("nan")
    with pytest.raises(FloatingPointError):
        render_static(model16, req)
    # validation can be skipped explicitly
    render_static(model16, req, validate=False)


def test_principal_point_shift_translates_image(model16):
    # adding one pixel to cx reuses the exact same rays shifted by one
    # column, so the images must agree exactly on the overlap
    from planesoup.geometry import CameraIntrinsics

    req = _request(10)
    k = req.intrinsics
    k2 = CameraIntrinsics(fx=k.fx, fy=k.fy, cx=k.cx + 1.0, cy=k.cy,
                          width=k.width, height=k.height)
    a = render_static(model16, req, dtype=torch.float64)
    b = render_static(model16, RenderRequest(k2, req.pose),
                      dtype=torch.float64)
    assert float((b.color[:, 1:] - a.color[:, :-1]).abs().max()) < 1e-12


def test_gradients_flow_through_render(model16):
    req = _request(11)
    tex = model16.textures[0]
    tex.color_sh.requires_grad_(True)
    tex.alpha_logits.requires_grad_(True)
    tex.disp_sh.requires_grad_(True)
    out = render_static(model16, req, dtype=torch.float32)
    loss = out.color.sum()
    loss.backward()
    assert tex.color_sh.grad is not None
    assert torch.isfinite(tex.color_sh.grad).all()
    assert float(tex.color_sh.grad.abs().sum()) > 0
    assert torch.isfinite(tex.alpha_logits.grad).all()
    assert torch.isfinite(tex.disp_sh.grad).all()


def test_collect_plane_alpha_shapes(model16):
    req = _request(12)
    out = render_static(model16, req, collect_plane_alpha=True)
    assert out.plane_alpha is not None
    assert out.plane_alpha.shape == (16, req.intrinsics.height,
                                     req.intrinsics.width)
    assert float(out.plane_alpha.min()) >= 0.0
    assert float(out.plane_alpha.max()) <= 1.0


def test_active_band_limiting_changes_view_dependence(model16):
    req = _request(13)
    full = render_static(model16, req, dtype=torch.float64)
    limited = StaticModel(model16.planes, model16.textures,
                          model16.sh_degrees, active_color_bands=0,
                          active_disp_bands=0)
    out = render_static(limited, req, dtype=torch.float64)
    assert float((out.color - full.color).abs().max()) > 1e-6
