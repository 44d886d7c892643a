"""Per-video optimization: parameter initialization, the SH band schedule,
the distance-based gradient scaler, and the Adam training loop (one view
per iteration, round-robin).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor

from .bundle_io import SceneBundle
from .dynamic_renderer import DynamicLayers, SplatConfig
from .geometry import PlaneGeometry
from .losses import LossWeights, flow_refine_losses, total_loss
from .pipeline import render_full
from .plane_fitting import scene_scale_of
from .static_renderer import StaticModel
from .textures import SH_C0, PlaneTexture, ShBasisDegree


@dataclass
class TrainConfig:
    iterations: int = 2000  # 480x270-class inputs; 1000 for 860x480-class
    sh_band_step: int = 50  # one more active SH band every this many iterations
    texture_size: int = 256
    disp_size: int = 32
    sh_degrees: ShBasisDegree = field(default_factory=ShBasisDegree)
    lr_texture_color: float = 3e-3
    lr_texture_alpha: float = 3e-3
    lr_texture_disp: float = 1.5e-3
    lr_plane_geometry: float = 1e-3  # scaled by scene_scale for centers
    lr_poses: float = 1e-4
    lr_dynamic_rgb: float = 1e-2
    lr_dynamic_mask: float = 1e-2
    lr_dynamic_depth: float = 1e-3  # scaled by scene_scale
    lr_flow: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_scaler_enabled: bool = False
    optimize_planes: bool = False  # centers + rotations (extents stay fixed)
    optimize_poses: bool = False
    optimize_flows: bool = False
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    splat: SplatConfig = field(default_factory=SplatConfig)
    log_every: int = 50

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("lr_texture_color", "lr_texture_alpha", "lr_texture_disp",
                     "lr_plane_geometry", "lr_poses", "lr_dynamic_rgb",
                     "lr_dynamic_mask", "lr_dynamic_depth", "lr_flow"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def sh_band_schedule(iteration: int, step: int, l_max: int) -> int:
    """Active SH bands at an iteration: one more every `step`, capped at l_max."""
    return min(l_max, iteration // max(step, 1))


def init_textures(bundle: SceneBundle, planes: list[PlaneGeometry],
                  cfg: TrainConfig, keyframe_stride: int = 4) -> list[PlaneTexture]:
    """Seed per-plane textures from the keyframes.

    Every static keyframe pixel's 3D point is assigned to its nearest plane;
    the camera-center -> point ray is intersected with that plane and the hit
    cell of a 4x-coarser grid accumulates the pixel color. The coarse means
    are bilinearly upsampled to the full texture resolution as band-0
    coefficients (divided by the constant SH basis value); keyframe pixels
    are much sparser than full-resolution texels, so splatting at texel
    resolution would leave most of the visible region uninitialized. Texels
    outside the observed region get alpha logit -4, observed ones +4;
    displacement starts at zero.
    """
    k = bundle.intrinsics
    s = cfg.texture_size
    sc = max(s // 4, 16)  # coarse accumulation grid
    n_p = len(planes)
    sums = torch.zeros(n_p, sc, sc, 3)
    counts = torch.zeros(n_p, sc, sc)

    basis = torch.stack([p.basis for p in planes]).to(torch.float32)
    center = torch.stack([p.center for p in planes]).to(torch.float32)
    wh = torch.tensor([[float(p.w), float(p.h)] for p in planes])

    from .geometry import pixel_grid
    from .plane_fitting import PointCloud, _distance_matrix

    pix = pixel_grid(k, dtype=torch.float32)
    n_frames = bundle.frames.shape[0]
    for t in range(0, n_frames, keyframe_stride):
        pose = bundle.poses[t]
        depth = bundle.depths[t]
        keep = (~bundle.masks[t]) & torch.isfinite(depth) & (depth > 0)
        x = (pix[..., 0] - k.cx) / k.fx * depth
        y = (pix[..., 1] - k.cy) / k.fy * depth
        cam = torch.stack([x, y, depth], dim=-1)
        world = cam.reshape(-1, 3) @ pose.rotation.to(torch.float32) \
            + pose.camera_center.to(torch.float32)
        pts = world[keep.reshape(-1)]
        colors = bundle.frames[t].reshape(-1, 3)[keep.reshape(-1)]
        if pts.numel() == 0:
            continue
        d_mat = _distance_matrix(basis, center, wh[:, 0], wh[:, 1], pts)
        assign = d_mat.argmin(dim=0)

        origin = pose.camera_center.to(torch.float32)
        d = pts - origin
        n_vec = basis[assign][:, :, 2]
        denom = (d * n_vec).sum(-1)
        ok = denom.abs() > 1e-9
        tt = ((center[assign] - origin) * n_vec).sum(-1) \
            / torch.where(ok, denom, torch.ones_like(denom))
        hp = origin + tt[:, None] * d
        local = torch.einsum("mk,mkj->mj", hp - center[assign], basis[assign])
        u = local[:, 0] / wh[assign, 0] + 0.5
        v = local[:, 1] / wh[assign, 1] + 0.5
        ok = ok & (tt > 0) & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        tx = (u * sc - 0.5).round().long().clamp(0, sc - 1)
        ty = (v * sc - 0.5).round().long().clamp(0, sc - 1)
        flat = (assign * sc * sc + ty * sc + tx)[ok]
        sums.reshape(-1, 3).index_add_(0, flat, colors[ok])
        counts.reshape(-1).index_add_(0, flat, torch.ones(int(ok.sum())))

    import torch.nn.functional as F

    mean_c = sums / counts.clamp_min(1)[..., None]
    mean_up = F.interpolate(mean_c.permute(0, 3, 1, 2), size=(s, s),
                            mode="bilinear", align_corners=False).permute(0, 2, 3, 1)
    touched_up = F.interpolate(1.0 * (counts > 0)[:, None], size=(s, s),
                               mode="bilinear", align_corners=False)[:, 0]
    textures = []
    for i in range(n_p):
        tex = PlaneTexture.zeros(cfg.sh_degrees, size=s, disp_size=cfg.disp_size,
                                 alpha_logit=-4.0)
        touched = touched_up[i] > 0.25
        tex.color_sh[..., 0] = torch.where(touched[..., None], mean_up[i] / SH_C0,
                                           torch.zeros_like(mean_up[i]))
        tex.alpha_logits = torch.where(touched, torch.full_like(touched_up[i], 4.0),
                                       torch.full_like(touched_up[i], -4.0))
        textures.append(tex)
    return textures


def init_dynamic(bundle: SceneBundle, mask_soft: Tensor | None = None) -> DynamicLayers:
    """Seed the dynamic layers: color = frame, mask logits = logit of the
    (clamped) precomputed mask, depth = precomputed depth."""
    m = bundle.masks.to(torch.float32) if mask_soft is None else mask_soft
    m = m.clamp(0.02, 0.98)
    return DynamicLayers(
        rgb=bundle.frames.clone(),
        mask_logits=torch.log(m / (1 - m)),
        depth=bundle.depths.clone(),
    )


def scale_gradients(textures: list[PlaneTexture], planes: list[PlaneGeometry],
                    cam_center: Tensor, scene_scale: float) -> None:
    """Scale texture gradients by clamp(d_texel / scene_scale, 0, 1)^2.

    d_texel is the distance from the current camera center to the texel's 3D
    position; near-camera texels learn slower, which suppresses floaters.
    """
    for plane, tex in zip(planes, textures):
        for grid in (tex.color_sh, tex.alpha_logits, tex.disp_sh):
            if grid.grad is None:
                continue
            s = grid.shape[0]
            ax = (torch.arange(s, dtype=torch.float32) + 0.5) / s - 0.5
            gy, gx = torch.meshgrid(ax, ax, indexing="ij")
            b = plane.basis.to(torch.float32)
            pos = (plane.center.to(torch.float32)
                   + gx[..., None] * float(plane.w) * b[:, 0]
                   + gy[..., None] * float(plane.h) * b[:, 1])
            d = torch.linalg.norm(pos - cam_center.to(torch.float32), dim=-1)
            factor = (d / scene_scale).clamp(0, 1) ** 2
            grid.grad *= factor.reshape((s, s) + (1,) * (grid.dim() - 2))


@dataclass
class TrainResult:
    model: StaticModel
    dynamic: DynamicLayers | None
    metrics: list  # per-logged-iteration dicts of loss terms


def train(bundle: SceneBundle, static_init: StaticModel,
          dyn_init: DynamicLayers | None, cfg: TrainConfig) -> TrainResult:
    """Optimize textures (and optionally dynamic layers, planes, poses, flows)
    against the video, one round-robin view per iteration."""
    torch.manual_seed(cfg.seed)
    scene_scale = scene_scale_of(bundle)
    n_frames = bundle.frames.shape[0]
    k = bundle.intrinsics
    has_dynamic = dyn_init is not None and bool(bundle.masks.any())

    textures = [PlaneTexture(color_sh=t.color_sh.clone().requires_grad_(True),
                             alpha_logits=t.alpha_logits.clone().requires_grad_(True),
                             disp_sh=t.disp_sh.clone().requires_grad_(True))
                for t in static_init.textures]
    groups = [
        {"params": [t.color_sh for t in textures], "lr": cfg.lr_texture_color},
        {"params": [t.alpha_logits for t in textures], "lr": cfg.lr_texture_alpha},
        {"params": [t.disp_sh for t in textures], "lr": cfg.lr_texture_disp},
    ]

    base_planes = static_init.planes
    if cfg.optimize_planes:
        from .geometry import axis_angle_to_matrix

        basis0 = torch.stack([p.basis for p in base_planes]).to(torch.float32)
        centers = torch.stack([p.center for p in base_planes]).to(torch.float32) \
            .clone().requires_grad_(True)
        plane_aa = torch.zeros(len(base_planes), 3, requires_grad=True)
        groups.append({"params": [plane_aa], "lr": cfg.lr_plane_geometry})
        groups.append({"params": [centers],
                       "lr": cfg.lr_plane_geometry * scene_scale})

    if cfg.optimize_poses:
        pose_aa = torch.zeros(n_frames, 3, requires_grad=True)
        pose_tr = torch.zeros(n_frames, 3, requires_grad=True)
        groups.append({"params": [pose_aa, pose_tr], "lr": cfg.lr_poses})

    dynamic = None
    if has_dynamic:
        dynamic = DynamicLayers(
            rgb=dyn_init.rgb.clone().requires_grad_(True),
            mask_logits=dyn_init.mask_logits.clone().requires_grad_(True),
            depth=dyn_init.depth.clone().requires_grad_(True))
        groups += [
            {"params": [dynamic.rgb], "lr": cfg.lr_dynamic_rgb},
            {"params": [dynamic.mask_logits], "lr": cfg.lr_dynamic_mask},
            {"params": [dynamic.depth], "lr": cfg.lr_dynamic_depth * scene_scale},
        ]

    flows = dict(bundle.flows)
    flow_params = {}
    if cfg.optimize_flows:
        flow_params = {key: f.clone().requires_grad_(True)
                       for key, f in bundle.flows.items()}
        flows = flow_params
        groups.append({"params": list(flow_params.values()), "lr": cfg.lr_flow})

    opt = torch.optim.Adam(groups, betas=cfg.adam_betas, eps=cfg.adam_eps)
    metrics = []

    for it in range(cfg.iterations):
        t = it % n_frames
        if cfg.optimize_poses:
            from .geometry import Pose, axis_angle_to_matrix

            deltas = axis_angle_to_matrix(pose_aa)
            poses = [Pose((deltas[i] @ bundle.poses[i].rotation.to(torch.float32)).to(torch.float64),
                          (bundle.poses[i].translation.to(torch.float32) + pose_tr[i]).to(torch.float64))
                     for i in range(n_frames)]
        else:
            poses = bundle.poses

        if cfg.optimize_planes:
            from .geometry import axis_angle_to_matrix

            rot = axis_angle_to_matrix(plane_aa)
            planes = [PlaneGeometry.__new__(PlaneGeometry) for _ in base_planes]
            for i, p in enumerate(base_planes):
                object.__setattr__(planes[i], "basis", rot[i] @ basis0[i])
                object.__setattr__(planes[i], "center", centers[i])
                object.__setattr__(planes[i], "w", p.w)
                object.__setattr__(planes[i], "h", p.h)
        else:
            planes = base_planes

        model = StaticModel(
            planes=planes, textures=textures, sh_degrees=cfg.sh_degrees,
            active_color_bands=sh_band_schedule(it, cfg.sh_band_step,
                                                cfg.sh_degrees.l_max_color),
            active_disp_bands=sh_band_schedule(it, cfg.sh_band_step,
                                               cfg.sh_degrees.l_max_disp))

        out, static = render_full(
            model, dynamic, flows, poses, k, t, poses[t], k, cfg.splat,
            scene_scale=scene_scale, collect_plane_alpha=True,
            return_static=True)

        mask_logits = (dynamic.mask_logits[t] if has_dynamic
                       else torch.full_like(bundle.depths[t], -10.0))
        flow_terms = 0.0
        if cfg.optimize_flows:
            for j in cfg.splat.neighbor_offsets:
                fwd = flow_params.get((t, j))
                bwd = flow_params.get((t + j, -j))
                if fwd is not None and bwd is not None:
                    flow_terms = flow_terms + flow_refine_losses(
                        fwd, bwd, bundle.frames[t], bundle.frames[t + j],
                        cfg.weights.gamma)

        loss, terms = total_loss(
            full_rgb=out.color, full_depth=out.depth,
            static_rgb=static.color, static_depth=static.depth,
            plane_alpha=static.plane_alpha,
            frame=bundle.frames[t], depth_pre=bundle.depths[t],
            mask_pre=bundle.masks[t].to(torch.float32),
            mask_logits=mask_logits,
            weights=cfg.weights, iteration=it,
            total_iterations=cfg.iterations, flow_terms=flow_terms)

        opt.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_scaler_enabled:
            scale_gradients(textures, planes, poses[t].camera_center, scene_scale)
        opt.step()

        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            metrics.append({"iteration": it, "total": float(loss.detach()), **terms})

    final_textures = [PlaneTexture(color_sh=t.color_sh.detach(),
                                   alpha_logits=t.alpha_logits.detach(),
                                   disp_sh=t.disp_sh.detach())
                      for t in textures]
    if cfg.optimize_planes:
        from .geometry import axis_angle_to_matrix

        with torch.no_grad():
            rot = axis_angle_to_matrix(plane_aa).to(torch.float64)
            u_svd, _, vt = torch.linalg.svd(rot @ basis0.to(torch.float64))
            basis_f = u_svd @ vt
        final_planes = [PlaneGeometry(basis=basis_f[i],
                                      center=centers[i].detach().to(torch.float64),
                                      w=p.w, h=p.h)
                        for i, p in enumerate(base_planes)]
    else:
        final_planes = base_planes
    model = StaticModel(planes=final_planes, textures=final_textures,
                        sh_degrees=cfg.sh_degrees)
    final_dynamic = None
    if has_dynamic:
        final_dynamic = DynamicLayers(rgb=dynamic.rgb.detach().clamp(0, 1),
                                      mask_logits=dynamic.mask_logits.detach(),
                                      depth=dynamic.depth.detach())
    return TrainResult(model=model, dynamic=final_dynamic, metrics=metrics)
