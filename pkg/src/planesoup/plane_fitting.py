"""Fit the global soup of oriented planes to the static-scene point cloud.

The cloud is built by unprojecting keyframe depth maps (dynamic pixels
excluded), with normals from cross products of unprojected-neighbor
differences. Planes are optimized with Adam on axis-angle rotation, center,
and log-extents under a hard-assignment objective:

    sum_X [ d(P_a(X), X) + lambda_norm * (1 - <n_P, n_X>^2) ]
        + lambda_area * sum_i w_i h_i

where d is the finite-rectangle distance and a(X) is the nearest plane by
that same distance, recomputed every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .bundle_io import SceneBundle
from .geometry import (PlaneGeometry, Pose, axis_angle_to_matrix,
                       finite_plane_distance, pixel_grid)


@dataclass
class FittingConfig:
    n_planes: int = 64
    iterations: int = 5000
    lambda_norm: float = 1e6
    lambda_area: float = 1e-4
    seed: int = 0
    keyframe_stride: int = 4
    lr_center: float = 1e-2  # scaled by scene_scale
    lr_rotation: float = 1e-2
    lr_extent: float = 1e-2  # scaled by scene_scale
    max_points: int = 40_000
    reseed_patience: int = 100  # idle iterations before an empty plane moves
    init_extent_scale: float = 0.3  # extent = scale * depth at the seed point
    min_extent: float = 1e-3  # relative to scene_scale
    log_every: int = 0


@dataclass
class PointCloud:
    """Oriented static points in world space.

    depth_ref is each point's depth in the first keyframe's camera; it drives
    the inverse-depth seeding distribution and the initial extents.
    """

    points: Tensor  # [M, 3]
    normals: Tensor  # [M, 3] unit, oriented toward their source camera
    depth_ref: Tensor  # [M]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Assignment:
    indices: Tensor  # [M] long, nearest plane per point
    distances: Tensor  # [M] finite-rectangle distance to that plane


def scene_scale_of(bundle: SceneBundle, keyframe_stride: int = 4) -> float:
    """Median depth of the first keyframe; the global metric normalizer."""
    depth = bundle.depths[0]
    finite = depth[torch.isfinite(depth)]
    return float(finite.median())


def _grid_normals(points: Tensor, cam_center: Tensor) -> Tensor:
    """Normals of an unprojected [H, W, 3] grid via neighbor cross products."""
    dx = points[:, 1:] - points[:, :-1]
    dx = torch.cat([dx, dx[:, -1:]], dim=1)
    dy = points[1:] - points[:-1]
    dy = torch.cat([dy, dy[-1:]], dim=0)
    n = torch.linalg.cross(dx, dy)
    n = n / torch.linalg.norm(n, dim=-1, keepdim=True).clamp_min(1e-12)
    to_cam = cam_center - points
    flip = (n * to_cam).sum(-1, keepdim=True) < 0
    return torch.where(flip, -n, n)


def build_static_cloud(bundle: SceneBundle, config: FittingConfig) -> PointCloud:
    """Unproject every static pixel of every keyframe into a world cloud."""
    k = bundle.intrinsics
    pix = pixel_grid(k, dtype=torch.float32)
    pts_all, nrm_all = [], []
    n_frames = bundle.frames.shape[0]
    for t in range(0, n_frames, config.keyframe_stride):
        pose = bundle.poses[t]
        depth = bundle.depths[t]
        x = (pix[..., 0] - k.cx) / k.fx * depth
        y = (pix[..., 1] - k.cy) / k.fy * depth
        cam = torch.stack([x, y, depth], dim=-1)
        world = cam.reshape(-1, 3) @ pose.rotation.to(torch.float32) \
            + pose.camera_center.to(torch.float32)
        world = world.reshape(cam.shape)
        normals = _grid_normals(world, pose.camera_center.to(torch.float32))
        keep = (~bundle.masks[t]) & torch.isfinite(depth) & (depth > 0)
        # a pixel next to an invalid-depth pixel gets its normal from an
        # infinite neighbor position; drop those points too
        keep &= torch.isfinite(normals).all(-1)
        pts_all.append(world[keep])
        nrm_all.append(normals[keep])
    points = torch.cat(pts_all)
    normals = torch.cat(nrm_all)
    if len(points) == 0:
        raise ValueError("no static points: every keyframe pixel is dynamic or invalid")
    if len(points) > config.max_points:
        gen = torch.Generator().manual_seed(config.seed)
        sel = torch.randperm(len(points), generator=gen)[: config.max_points]
        points, normals = points[sel], normals[sel]
    depth_ref = bundle.poses[0].apply(points.to(torch.float64))[:, 2].to(torch.float32)
    depth_ref = depth_ref.clamp_min(1e-3)
    return PointCloud(points=points, normals=normals, depth_ref=depth_ref)


def _basis_from_normal(n: Tensor) -> Tensor:
    """Right-handed basis [u v n] (columns) with the given unit normal(s) [.., 3]."""
    n = n / torch.linalg.norm(n, dim=-1, keepdim=True).clamp_min(1e-12)
    helper = torch.tensor([0.0, 1.0, 0.0], dtype=n.dtype).expand_as(n)
    alt = torch.tensor([1.0, 0.0, 0.0], dtype=n.dtype).expand_as(n)
    helper = torch.where((n[..., 1:2].abs() > 0.9), alt, helper)
    u = torch.linalg.cross(helper, n)
    u = u / torch.linalg.norm(u, dim=-1, keepdim=True).clamp_min(1e-12)
    v = torch.linalg.cross(n, u)
    return torch.stack([u, v, n], dim=-1)


def init_planes(cloud: PointCloud, config: FittingConfig) -> list[PlaneGeometry]:
    """Seed planes at cloud points sampled with probability proportional to
    inverse depth; normals copied from the seeds, extents grow with depth
    (nearer planes start smaller)."""
    gen = torch.Generator().manual_seed(config.seed)
    prob = 1.0 / cloud.depth_ref
    n = min(config.n_planes, len(cloud))
    idx = torch.multinomial(prob, n, replacement=len(cloud) < config.n_planes,
                            generator=gen)
    if n < config.n_planes:  # tiny clouds: reuse points
        extra = torch.multinomial(prob, config.n_planes - n, replacement=True,
                                  generator=gen)
        idx = torch.cat([idx, extra])
    planes = []
    for i in idx.tolist():
        normal = cloud.normals[i].to(torch.float64)
        size = float(config.init_extent_scale * cloud.depth_ref[i])
        planes.append(PlaneGeometry(
            basis=_basis_from_normal(normal),
            center=cloud.points[i].to(torch.float64),
            w=size, h=size))
    return planes


def _distance_matrix(basis: Tensor, center: Tensor, w: Tensor, h: Tensor,
                     points: Tensor) -> Tensor:
    """Finite-rectangle distances [N_p, M]."""
    rel = points[None, :, :] - center[:, None, :]  # [N_p, M, 3]
    local = torch.einsum("nmk,nkj->nmj", rel, basis)
    return finite_plane_distance(local, w[:, None], h[:, None])


def compute_assignment(planes: list[PlaneGeometry], cloud: PointCloud) -> Assignment:
    basis = torch.stack([p.basis for p in planes]).to(torch.float32)
    center = torch.stack([p.center for p in planes]).to(torch.float32)
    w = torch.tensor([float(p.w) for p in planes])
    h = torch.tensor([float(p.h) for p in planes])
    d = _distance_matrix(basis, center, w, h, cloud.points)
    dist, idx = d.min(dim=0)
    return Assignment(indices=idx, distances=dist)


def fitting_objective(planes: list[PlaneGeometry], cloud: PointCloud,
                      assignment: Assignment, config: FittingConfig) -> Tensor:
    """The fitted objective at an explicit plane list / assignment."""
    basis = torch.stack([p.basis for p in planes]).to(torch.float32)
    center = torch.stack([p.center for p in planes]).to(torch.float32)
    w = torch.tensor([float(p.w) for p in planes])
    h = torch.tensor([float(p.h) for p in planes])
    a = assignment.indices
    rel = cloud.points - center[a]
    local = torch.einsum("mk,mkj->mj", rel, basis[a])
    dist = finite_plane_distance(local, w[a], h[a])
    cos = (basis[a][:, :, 2] * cloud.normals).sum(-1)
    misalign = 1.0 - cos ** 2
    return dist.sum() + config.lambda_norm * misalign.sum() \
        + config.lambda_area * (w * h).sum()


def fit_planes(cloud: PointCloud, config: FittingConfig,
               scene_scale: float | None = None,
               init: list[PlaneGeometry] | None = None,
               return_history: bool = False):
    """Optimize plane parameters against the cloud; returns list[PlaneGeometry]."""
    if scene_scale is None:
        scene_scale = float(cloud.depth_ref.median())
    if init is None:
        init = init_planes(cloud, config)
    n_p = len(init)
    basis0 = torch.stack([p.basis for p in init]).to(torch.float32)
    axis_angle = torch.zeros(n_p, 3, requires_grad=True)
    center = torch.stack([p.center for p in init]).to(torch.float32) \
        .clone().requires_grad_(True)
    min_e = config.min_extent * scene_scale
    log_extent = torch.log(torch.tensor(
        [[max(float(p.w), min_e), max(float(p.h), min_e)] for p in init],
        dtype=torch.float32)).requires_grad_(True)

    opt = torch.optim.Adam([
        {"params": [center], "lr": config.lr_center * scene_scale},
        {"params": [axis_angle], "lr": config.lr_rotation},
        {"params": [log_extent], "lr": config.lr_extent},
    ], betas=(0.9, 0.999), eps=1e-8)

    points = cloud.points
    normals = cloud.normals
    m = len(cloud)
    idle = torch.zeros(n_p, dtype=torch.long)
    history = []

    for it in range(config.iterations):
        basis = axis_angle_to_matrix(axis_angle) @ basis0
        wh = torch.exp(log_extent).clamp_min(min_e)
        w, h = wh[:, 0], wh[:, 1]

        with torch.no_grad():
            d_all = _distance_matrix(basis, center, w, h, points)
            dist_min, assign = d_all.min(dim=0)
            counts = torch.bincount(assign, minlength=n_p)
            idle = torch.where(counts == 0, idle + 1, torch.zeros_like(idle))
            stale = (idle >= config.reseed_patience).nonzero().flatten()
            if stale.numel() > 0:
                worst = torch.topk(dist_min, k=min(stale.numel(), m)).indices
                for rank, pi in enumerate(stale.tolist()):
                    src = worst[rank % worst.numel()]
                    center.data[pi] = points[src]
                    basis0[pi] = _basis_from_normal(normals[src])
                    axis_angle.data[pi] = 0.0
                    log_extent.data[pi] = torch.log(torch.clamp(
                        config.init_extent_scale * cloud.depth_ref[src],
                        min=min_e)).expand(2)
                    for p in (center, axis_angle, log_extent):
                        state = opt.state.get(p)
                        if state:
                            state["exp_avg"][pi] = 0.0
                            state["exp_avg_sq"][pi] = 0.0
                    idle[pi] = 0
                basis = axis_angle_to_matrix(axis_angle) @ basis0
                d_all = _distance_matrix(basis, center, w, h, points)
                _, assign = d_all.min(dim=0)

        rel = points - center[assign]
        local = torch.einsum("mk,mkj->mj", rel, basis[assign])
        dist = finite_plane_distance(local, w[assign], h[assign])
        cos = (basis[assign][:, :, 2] * normals).sum(-1)
        loss = dist.sum() + config.lambda_norm * (1.0 - cos ** 2).sum() \
            + config.lambda_area * (w * h).sum()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if return_history and (config.log_every and it % config.log_every == 0):
            history.append(float(loss))

    with torch.no_grad():
        basis = (axis_angle_to_matrix(axis_angle) @ basis0).to(torch.float64)
        u_svd, _, vt = torch.linalg.svd(basis)
        basis = u_svd @ vt  # snap float32 round-off back onto SO(3)
        wh = torch.exp(log_extent).clamp_min(min_e)
    planes = [PlaneGeometry(basis=basis[i].to(torch.float64),
                            center=center[i].detach().to(torch.float64),
                            w=float(wh[i, 0]), h=float(wh[i, 1]))
              for i in range(n_p)]
    if return_history:
        return planes, history
    return planes
