"""Per-frame dynamic content: temporal neighbor blending, depth-ordered
forward softmax splatting, and occlusion-aware static/dynamic composition.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .geometry import CameraIntrinsics, Pose, pixel_grid
from .static_renderer import DEPTH_SENTINEL

CYCLE_VALID_PX = 1.0


@dataclass
class DynamicLayer:
    """Per-frame dynamic color, soft-mask logits, and dynamic depth."""

    rgb: Tensor  # [H, W, 3] in [0, 1]
    mask_logits: Tensor  # [H, W]
    depth: Tensor  # [H, W], > 0

    @property
    def mask(self) -> Tensor:
        return torch.sigmoid(self.mask_logits)


@dataclass
class DynamicLayers:
    """Whole-video stack of per-frame dynamic layers."""

    rgb: Tensor  # [N, H, W, 3]
    mask_logits: Tensor  # [N, H, W]
    depth: Tensor  # [N, H, W]

    def __len__(self) -> int:
        return self.rgb.shape[0]

    def layer(self, t: int) -> DynamicLayer:
        return DynamicLayer(self.rgb[t], self.mask_logits[t], self.depth[t])


@dataclass
class FlowField:
    """Optical flow t -> t+j in pixels, plus a cycle-consistency validity mask."""

    flow: Tensor  # [H, W, 2]
    valid: Tensor  # [H, W] in {0, 1}


@dataclass
class SplatConfig:
    kappa: float = 10.0  # softmax depth sharpness
    weight_floor: float = 1e-4
    occlusion_tau: float = 0.05  # multiplied by scene_scale by the caller
    neighbor_offsets: tuple[int, ...] = (-2, -1, 1, 2)
    blend_weights: dict = field(default_factory=lambda: {0: 0.5, 1: 0.2, -1: 0.2,
                                                         2: 0.05, -2: 0.05})

    def __post_init__(self):
        if self.kappa <= 0 or self.occlusion_tau <= 0:
            raise ValueError("kappa and occlusion_tau must be positive")


def cycle_validity(forward: Tensor, backward: Tensor,
                   threshold: float = CYCLE_VALID_PX) -> Tensor:
    """Forward-backward consistency mask for flow pair (t->t+j, t+j->t)."""
    h, w = forward.shape[:2]
    base = torch.stack(torch.meshgrid(
        torch.arange(w, dtype=forward.dtype) + 0.5,
        torch.arange(h, dtype=forward.dtype) + 0.5, indexing="xy"), dim=-1)
    target = base + forward
    back = _backwarp(backward, forward)
    err = torch.linalg.norm(forward + back, dim=-1)
    inb = ((target[..., 0] >= 0) & (target[..., 0] <= w)
           & (target[..., 1] >= 0) & (target[..., 1] <= h))
    return ((err < threshold) & inb).to(forward.dtype)


def _backwarp(image: Tensor, flow: Tensor) -> Tensor:
    """Sample image [H, W, C] at x + flow(x); clamp-to-edge borders."""
    from .textures import bilinear_sample

    h, w = image.shape[:2]
    gy, gx = torch.meshgrid(torch.arange(h, dtype=flow.dtype),
                            torch.arange(w, dtype=flow.dtype), indexing="ij")
    return bilinear_sample(image, gx + flow[..., 0], gy + flow[..., 1])


def blend_neighbors(center: DynamicLayer, neighbors: dict[int, DynamicLayer],
                    flows: dict[int, FlowField], cfg: SplatConfig):
    """Blend center-frame dynamic color/mask with flow-warped neighbors.

    neighbors/flows are keyed by the temporal offset j; flow j is the field
    t -> t+j used to backwarp neighbor content into frame t. Invalid-flow
    pixels fall back to the center frame.
    """
    rgb_c = center.rgb
    mask_c = center.mask
    w0 = cfg.blend_weights.get(0, 0.5)
    acc_rgb = w0 * rgb_c * mask_c[..., None]
    acc_mask = w0 * mask_c
    acc_w = torch.full_like(mask_c, w0)
    for j, layer in neighbors.items():
        if j not in flows or j not in cfg.blend_weights:
            continue
        wj = cfg.blend_weights[j]
        if wj == 0.0:
            continue
        ff = flows[j]
        warped = _backwarp(torch.cat([layer.rgb * layer.mask[..., None],
                                      layer.mask[..., None]], dim=-1), ff.flow)
        v = ff.valid
        acc_rgb = acc_rgb + (wj * v)[..., None] * warped[..., :3]
        acc_mask = acc_mask + wj * v * warped[..., 3]
        acc_w = acc_w + wj * v
    blended_mask = acc_mask / acc_w
    # premultiplied blend; un-premultiply where there is any mask support
    denom = acc_mask.clamp_min(1e-8)
    blended_rgb = torch.where(acc_mask[..., None] > 1e-8,
                              acc_rgb / denom[..., None], rgb_c)
    return blended_rgb, blended_mask


def splat_dynamic(blended_rgb: Tensor, blended_mask: Tensor, depth: Tensor,
                  src_K: CameraIntrinsics, src_pose: Pose,
                  dst_K: CameraIntrinsics, dst_pose: Pose,
                  cfg: SplatConfig, timings: dict | None = None):
    """Forward softmax-splat of the blended dynamic layer into the target view.

    Each source pixel is unprojected with the dynamic depth, reprojected into
    the target camera, and deposited into a 2x2 bilinear footprint with weight
    w = m * exp(kappa * (z_max - z) / (z_max - z_min)), nearer pixels weighing
    exponentially more. Per-pixel accumulators are normalized by total weight;
    pixels below the weight floor get mask 0 and the +inf depth sentinel.

    Returns (rgb [H, W, 3], mask [H, W], depth [H, W]).
    """
    t0 = time.perf_counter()
    h, w = dst_K.height, dst_K.width
    sh, sw = src_K.height, src_K.width
    dtype = blended_rgb.dtype

    pix = pixel_grid(src_K, dtype=dtype)
    x = (pix[..., 0] - src_K.cx) / src_K.fx * depth
    y = (pix[..., 1] - src_K.cy) / src_K.fy * depth
    cam = torch.stack([x, y, depth], dim=-1).reshape(-1, 3)
    rel = dst_pose.compose(src_pose.inverse())
    tgt_cam = cam @ rel.rotation.to(dtype).T + rel.translation.to(dtype)
    z = tgt_cam[:, 2]
    front = z > 1e-6
    safe_z = torch.where(front, z, torch.ones_like(z))
    px = dst_K.fx * tgt_cam[:, 0] / safe_z + dst_K.cx
    py = dst_K.fy * tgt_cam[:, 1] / safe_z + dst_K.cy

    m = blended_mask.reshape(-1)
    rgb = blended_rgb.reshape(-1, 3)
    zf = z[front]
    if zf.numel() == 0:
        empty = torch.zeros(h, w, dtype=dtype)
        return (torch.zeros(h, w, 3, dtype=dtype), empty,
                torch.full((h, w), DEPTH_SENTINEL, dtype=dtype))
    z_min, z_max = zf.min().detach(), zf.max().detach()
    span = (z_max - z_min).clamp_min(1e-8)
    weight = m * torch.exp(cfg.kappa * (z_max - z) / span)
    weight = torch.where(front, weight, torch.zeros_like(weight))

    # 2x2 bilinear footprint in continuous pixel coordinates
    gx = px - 0.5
    gy = py - 0.5
    x0 = torch.floor(gx)
    y0 = torch.floor(gy)
    fx = gx - x0
    fy = gy - y0
    sum_w = torch.zeros(h * w, dtype=dtype)
    sum_rgb = torch.zeros(h * w, 3, dtype=dtype)
    sum_m = torch.zeros(h * w, dtype=dtype)
    sum_d = torch.zeros(h * w, dtype=dtype)
    for dx, dy, bw in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        cx = x0.long() + dx
        cy = y0.long() + dy
        inb = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & front
        raw = torch.where(inb, weight * bw, torch.zeros_like(weight))
        idx = (cy.clamp(0, h - 1) * w + cx.clamp(0, w - 1))
        sum_w = sum_w.index_add(0, idx, raw)
        sum_rgb = sum_rgb.index_add(0, idx, raw[:, None] * rgb)
        sum_m = sum_m.index_add(0, idx, raw * m)
        sum_d = sum_d.index_add(0, idx, raw * z)
    covered = sum_w > cfg.weight_floor
    norm = sum_w.clamp_min(cfg.weight_floor)
    out_rgb = torch.where(covered[:, None], sum_rgb / norm[:, None],
                          torch.zeros_like(sum_rgb))
    out_m = torch.where(covered, sum_m / norm, torch.zeros_like(sum_m))
    out_d = torch.where(covered, sum_d / norm,
                        torch.full_like(sum_d, DEPTH_SENTINEL))
    if timings is not None:
        timings["splat"] = timings.get("splat", 0.0) + time.perf_counter() - t0
    return out_rgb.reshape(h, w, 3), out_m.reshape(h, w), out_d.reshape(h, w)


def compose_final(static_rgb: Tensor, static_depth: Tensor,
                  dyn_rgb: Tensor, dyn_mask: Tensor, dyn_depth: Tensor,
                  cfg: SplatConfig, scene_scale: float = 1.0,
                  timings: dict | None = None):
    """Occlusion-aware blend of static and dynamic content.

    visibility v = sigmoid((static_depth - dyn_depth) / tau); the blended
    mask is m' = dyn_mask * v, and color/depth are convex combinations
    weighted by m'. Infinite-depth sentinels resolve to v=1 (no static
    surface) or v=0 (no dynamic surface).
    """
    t0 = time.perf_counter()
    tau = cfg.occlusion_tau * scene_scale
    s_inf = torch.isinf(static_depth)
    d_inf = torch.isinf(dyn_depth)
    ds = torch.where(s_inf, torch.zeros_like(static_depth), static_depth)
    dd = torch.where(d_inf, torch.zeros_like(dyn_depth), dyn_depth)
    v = torch.sigmoid((ds - dd) / tau)
    v = torch.where(s_inf & ~d_inf, torch.ones_like(v), v)
    v = torch.where(d_inf, torch.zeros_like(v), v)
    m = dyn_mask * v
    color = (1 - m[..., None]) * static_rgb + m[..., None] * dyn_rgb
    ws = 1 - m
    # blend with the sentinel-zeroed depths so no inf enters the graph, then
    # overlay the sentinel where an infinite input actually contributes
    depth = ws * ds + m * dd
    depth = torch.where((s_inf & (ws > 0)) | (d_inf & (m > 0)),
                        torch.full_like(depth, float("inf")), depth)
    if timings is not None:
        timings["compose"] = timings.get("compose", 0.0) + time.perf_counter() - t0
    return color, depth, m
