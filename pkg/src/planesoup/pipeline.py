"""Full render path: static soup-of-planes pass, temporal neighbor blending,
forward splatting of the dynamic layer, and static/dynamic composition.
"""

from __future__ import annotations

import torch

from .dynamic_renderer import (DynamicLayers, FlowField, SplatConfig,
                               blend_neighbors, compose_final, cycle_validity,
                               splat_dynamic)
from .geometry import CameraIntrinsics, Pose
from .static_renderer import RenderOutput, RenderRequest, StaticModel, render_static


def neighbor_flow_fields(flows: dict, t: int, offsets, h: int, w: int,
                         dtype=torch.float32) -> dict[int, FlowField]:
    """FlowFields t -> t+j with cycle-consistency validity, for available j."""
    out = {}
    for j in offsets:
        fwd = flows.get((t, j))
        if fwd is None:
            continue
        bwd = flows.get((t + j, -j))
        if bwd is None:
            valid = torch.ones(h, w, dtype=dtype)
        else:
            valid = cycle_validity(fwd.to(dtype), bwd.to(dtype))
        out[j] = FlowField(flow=fwd.to(dtype), valid=valid)
    return out


def render_full(model: StaticModel, dynamic: DynamicLayers | None,
                flows: dict, src_poses: list[Pose], src_K: CameraIntrinsics,
                t: int, target_pose: Pose, target_K: CameraIntrinsics,
                cfg: SplatConfig, scene_scale: float = 1.0,
                background=None, dtype=torch.float32,
                timings: dict | None = None,
                collect_plane_alpha: bool = False,
                return_static: bool = False,
                validate: bool = True):
    """Render color/depth/mask at (target camera, timestamp t).

    With return_static the static-only pass is returned alongside the final
    output (the trainer needs both for the masked static losses).
    """
    req = RenderRequest(target_K, target_pose, t=t)
    static = render_static(model, req, background=background, dtype=dtype,
                           timings=timings, collect_plane_alpha=collect_plane_alpha,
                           validate=validate)
    if dynamic is None or len(dynamic) == 0:
        h, w = target_K.height, target_K.width
        out = RenderOutput(static.color, static.depth,
                           static.alpha, mask=torch.zeros(h, w, dtype=dtype),
                           plane_alpha=static.plane_alpha)
        return (out, static) if return_static else out

    import time as _time

    t0 = _time.perf_counter()
    center = dynamic.layer(t)
    neighbors = {j: dynamic.layer(t + j) for j in cfg.neighbor_offsets
                 if 0 <= t + j < len(dynamic)}
    fields = neighbor_flow_fields(flows, t, neighbors.keys(),
                                  src_K.height, src_K.width, dtype=dtype)
    blended_rgb, blended_mask = blend_neighbors(center, neighbors, fields, cfg)
    if timings is not None:
        timings["blend"] = timings.get("blend", 0.0) + _time.perf_counter() - t0

    dyn_rgb, dyn_mask, dyn_depth = splat_dynamic(
        blended_rgb, blended_mask, center.depth.to(dtype),
        src_K, src_poses[t], target_K, target_pose, cfg, timings=timings)
    color, depth, mask = compose_final(static.color, static.depth,
                                       dyn_rgb, dyn_mask, dyn_depth,
                                       cfg, scene_scale, timings=timings)
    out = RenderOutput(color, depth, static.alpha, mask=mask,
                       plane_alpha=static.plane_alpha)
    return (out, static) if return_static else out
