"""Full render path: static shortcut, temporal coherence of the static
model, and the assembled dynamic pipeline."""

import torch

from planesoup.dynamic_renderer import DynamicLayers, SplatConfig
from planesoup.pipeline import neighbor_flow_fields, render_full
from planesoup.static_renderer import RenderRequest, render_static
from tests.conftest import jittered_pose, random_model, small_intrinsics


def _poses(n, gen):
    return [jittered_pose(gen, scale=0.05) for _ in range(n)]


def test_static_only_has_zero_mask(model16):
    gen = torch.Generator().manual_seed(0)
    k = small_intrinsics()
    poses = _poses(3, gen)
    out = render_full(model16, None, {}, poses, k, 0, poses[0], k,
                      SplatConfig())
    assert out.mask is not None and float(out.mask.max()) == 0.0


def test_static_model_time_invariant_bit_identical(model16):
    # same camera, different timestamps, no dynamic content: the global
    # static model must produce byte-identical frames
    gen = torch.Generator().manual_seed(1)
    k = small_intrinsics()
    poses = _poses(5, gen)
    target = poses[2]
    frames = [render_full(model16, None, {}, poses, k, t, target, k,
                          SplatConfig()) for t in range(5)]
    for f in frames[1:]:
        assert torch.equal(f.color, frames[0].color)
        assert torch.equal(f.depth, frames[0].depth)


def test_dynamic_layer_appears_in_output(model16):
    gen = torch.Generator().manual_seed(2)
    k = small_intrinsics()
    poses = _poses(3, gen)
    h, w = k.height, k.width
    rgb = torch.zeros(3, h, w, 3)
    rgb[..., 0] = 1.0  # bright red dynamic content
    dyn = DynamicLayers(rgb=rgb,
                        mask_logits=torch.full((3, h, w), 8.0),
                        depth=torch.full((3, h, w), 1.5))  # in front
    out = render_full(model16, dyn, {}, poses, k, 1, poses[1], k,
                      SplatConfig())
    static = render_static(model16, RenderRequest(k, poses[1]))
    assert float(out.mask.mean()) > 0.5
    assert float((out.color - static.color).abs().mean()) > 0.05
    assert float(out.color[..., 0].mean()) > float(static.color[..., 0].mean())


def test_return_static_gives_both_passes(model16):
    gen = torch.Generator().manual_seed(3)
    k = small_intrinsics()
    poses = _poses(2, gen)
    h, w = k.height, k.width
    dyn = DynamicLayers(rgb=torch.rand(2, h, w, 3),
                        mask_logits=torch.zeros(2, h, w),
                        depth=torch.full((2, h, w), 2.0))
    out, static = render_full(model16, dyn, {}, poses, k, 0, poses[0], k,
                              SplatConfig(), return_static=True)
    ref = render_static(model16, RenderRequest(k, poses[0]))
    assert torch.equal(static.color, ref.color)


def test_neighbor_flow_fields_validity():
    h, w = 8, 10
    fwd = torch.full((h, w, 2), 1.0)
    bwd = -fwd
    flows = {(2, 1): fwd, (3, -1): bwd, (2, -1): fwd.clone()}
    fields = neighbor_flow_fields(flows, 2, (-1, 1), h, w)
    assert set(fields) == {-1, 1}
    # (2,1) has a consistent reverse flow -> cycle-checked validity
    assert float(fields[1].valid.max()) == 1.0
    # (2,-1) has no reverse flow available -> assumed valid everywhere
    assert float(fields[-1].valid.min()) == 1.0


def test_timings_collected(model16):
    gen = torch.Generator().manual_seed(4)
    k = small_intrinsics()
    poses = _poses(2, gen)
    h, w = k.height, k.width
    dyn = DynamicLayers(rgb=torch.rand(2, h, w, 3),
                        mask_logits=torch.zeros(2, h, w),
                        depth=torch.full((2, h, w), 2.0))
    timings = {}
    render_full(model16, dyn, {}, poses, k, 0, poses[0], k, SplatConfig(),
                timings=timings)
    for stage in ("rasterize", "sort", "composite", "blend", "splat",
                  "compose"):
        assert stage in timings, stage
