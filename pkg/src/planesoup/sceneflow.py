"""Optional scene-flow regularization over per-frame 3D motion grids.

The per-point forward/backward 3D motion is parameterized as low-resolution
vector grids over (frame, image row, image col), trilinearly interpolated.
Everything here is inert unless scene-flow regularization is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .geometry import CameraIntrinsics, Pose, pixel_grid, project_point, unproject_pixel
from .textures import bilinear_sample


@dataclass
class SceneFlowGrids:
    """Forward (t -> t+1) and backward (t -> t-1) world-space motion grids."""

    fwd: Tensor  # [N, Gh, Gw, 3]
    bwd: Tensor  # [N, Gh, Gw, 3]
    height: int  # image resolution the grids span
    width: int

    @staticmethod
    def zeros(n_frames: int, height: int, width: int, grid: int = 16,
              dtype=torch.float32) -> "SceneFlowGrids":
        gh = max(2, grid * height // max(height, width))
        gw = max(2, grid)
        return SceneFlowGrids(
            fwd=torch.zeros(n_frames, gh, gw, 3, dtype=dtype),
            bwd=torch.zeros(n_frames, gh, gw, 3, dtype=dtype),
            height=height, width=width,
        )

    def _sample(self, field: Tensor, t: float, px: Tensor, py: Tensor) -> Tensor:
        """Trilinear sample at continuous (t, pixel x, pixel y) -> [N, 3]."""
        n, gh, gw = field.shape[0], field.shape[1], field.shape[2]
        gx = px / self.width * gw - 0.5
        gy = py / self.height * gh - 0.5
        t0 = int(min(max(int(t), 0), n - 1))
        t1 = min(t0 + 1, n - 1)
        ft = float(t) - t0
        a = bilinear_sample(field[t0], gx, gy)
        if ft <= 0 or t1 == t0:
            return a
        b = bilinear_sample(field[t1], gx, gy)
        return a * (1 - ft) + b * ft

    def forward_motion(self, t: float, px: Tensor, py: Tensor) -> Tensor:
        return self._sample(self.fwd, t, px, py)

    def backward_motion(self, t: float, px: Tensor, py: Tensor) -> Tensor:
        return self._sample(self.bwd, t, px, py)


def _dynamic_points(depth: Tensor, mask: Tensor, K: CameraIntrinsics, pose: Pose,
                    stride: int = 2):
    """(pixels [M, 2], world points [M, 3]) for masked pixels on a strided grid."""
    pix = pixel_grid(K, dtype=depth.dtype)[::stride, ::stride].reshape(-1, 2)
    d = depth[::stride, ::stride].reshape(-1)
    m = mask[::stride, ::stride].reshape(-1) > 0.5
    pix, d = pix[m], d[m]
    if pix.numel() == 0:
        return pix, pix
    pts = unproject_pixel(K, pose, pix, d)
    return pix, pts


def evaluate_scene_flow_losses(grids: SceneFlowGrids, dyn_depths: Tensor,
                               poses: list[Pose], K: CameraIntrinsics,
                               optical_flows: dict, masks: Tensor,
                               weights) -> Tensor:
    """Sum of the four scene-flow terms over every adjacent frame pair.

    optical_flows maps (t, +1) -> flow tensor [H, W, 2]; masks [N, H, W]
    selects dynamic pixels. Terms: projected-motion vs optical-flow endpoint
    error (weight 1), depth alignment of back-advected points (beta_depth),
    forward/backward cycle consistency (beta_cycle), and window smoothness
    of consecutive track motions (beta_smooth, window half-size omega).
    """
    n = dyn_depths.shape[0]
    dtype = grids.fwd.dtype
    total = torch.zeros((), dtype=dtype)
    count = 0
    for t in range(n - 1):
        pix, pts = _dynamic_points(dyn_depths[t].to(dtype), masks[t], K, poses[t])
        if pts.numel() == 0:
            continue
        motion = grids.forward_motion(t, pix[:, 0], pix[:, 1])
        moved = pts + motion

        # projected motion vs precomputed optical flow
        flow = optical_flows.get((t, 1))
        if flow is not None:
            proj, z1 = project_point(K, poses[t + 1], moved)
            pred_flow = proj - pix
            gt = bilinear_sample(flow.to(dtype), pix[:, 0] - 0.5, pix[:, 1] - 0.5)
            total = total + torch.linalg.norm(pred_flow - gt, dim=-1).mean()

        # cycle consistency: advect forward, then the backward field should return
        proj1, z1 = project_point(K, poses[t + 1], moved)
        back = grids.backward_motion(t + 1, proj1[:, 0], proj1[:, 1])
        total = total + weights.beta_cycle * torch.linalg.norm(motion + back, dim=-1).mean()

        # depth alignment: z of back-advected t+1 points vs the t depth map
        pix1, pts1 = _dynamic_points(dyn_depths[t + 1].to(dtype), masks[t + 1], K, poses[t + 1])
        if pts1.numel() > 0:
            back1 = grids.backward_motion(t + 1, pix1[:, 0], pix1[:, 1])
            moved_back = pts1 + back1
            proj0, z0 = project_point(K, poses[t], moved_back)
            inb = ((proj0[:, 0] >= 0) & (proj0[:, 0] < K.width)
                   & (proj0[:, 1] >= 0) & (proj0[:, 1] < K.height) & (z0 > 0))
            if bool(inb.any()):
                d_ref = bilinear_sample(dyn_depths[t].to(dtype),
                                        proj0[inb, 0] - 0.5, proj0[inb, 1] - 0.5)
                err = (d_ref - z0[inb]).abs() / (d_ref + z0[inb]).abs().clamp_min(1e-8)
                total = total + weights.beta_depth * err.mean()
        count += 1

    # track smoothness over the +-omega window around the sequence midpoint
    omega = weights.omega
    t_mid = (n - 1) // 2
    lo = max(0, t_mid - omega + 1)
    hi = min(n - 2, t_mid + omega - 1)
    pix, pts = _dynamic_points(dyn_depths[lo].to(dtype), masks[lo], K, poses[lo])
    if pts.numel() > 0:
        prev_motion = None
        cur = pts
        for i in range(lo, hi + 1):
            proj, _ = project_point(K, poses[i], cur)
            motion = grids.forward_motion(i, proj[:, 0], proj[:, 1])
            if prev_motion is not None:
                total = total + weights.beta_smooth * torch.linalg.norm(
                    motion - prev_motion, dim=-1).mean()
            prev_motion = motion
            cur = cur + motion
    if count:
        total = total / count
    return total
