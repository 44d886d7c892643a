"""Ground-truth synthetic scenes and the brute-force rendering oracle.

Scenes are built from textured rectangles (optionally a height-field quad
and Phong-style specular lobes for view-dependence tests) plus rigid
dynamic quads on scripted trajectories. The generator emits exact frames,
depths, poses, masks, and optical flows, with a held-out ground-truth pack.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .bundle_io import DEPTH_MAGIC, SceneBundle, write_raster
from .geometry import (CameraIntrinsics, PlaneGeometry, Pose, camera_rays,
                       project_point)


# --- materials ------------------------------------------------------------

@dataclass
class ProceduralTexture:
    """Seeded smooth value-noise RGB texture sampled bilinearly over uv."""

    grid: Tensor  # [G, G, 3]

    @staticmethod
    def random(seed: int, cells: int = 8, lo: float = 0.08, hi: float = 0.92):
        rng = np.random.default_rng(seed)
        g = rng.uniform(lo, hi, size=(cells, cells, 3))
        return ProceduralTexture(torch.from_numpy(g))

    def sample(self, u: Tensor, v: Tensor) -> Tensor:
        from .textures import bilinear_sample

        g = self.grid.to(u.dtype)
        s = g.shape[0]
        # wrap-free: uv in [0,1] maps across the full grid, clamped edges
        return bilinear_sample(g, u.clamp(0, 1) * (s - 1), v.clamp(0, 1) * (s - 1))


@dataclass
class Material:
    texture: ProceduralTexture
    specular_strength: float = 0.0
    specular_exponent: float = 16.0
    light_dir: tuple = (0.3, -0.5, -0.8)  # towards the light, world frame

    def shade(self, base: Tensor, normal: Tensor, view_dir: Tensor) -> Tensor:
        """base [M, 3], normal [M, 3] (towards camera), view_dir [M, 3] (ray dir)."""
        if self.specular_strength == 0.0:
            return base
        l = torch.tensor(self.light_dir, dtype=base.dtype)
        l = l / torch.linalg.norm(l)
        ndl = (normal * l).sum(-1, keepdim=True)
        r = 2 * ndl * normal - l
        spec = (r * (-view_dir)).sum(-1, keepdim=True).clamp_min(0.0)
        return (base + self.specular_strength * spec ** self.specular_exponent).clamp(0, 1)


@dataclass
class HeightField:
    """z_p = sum of sinusoids over plane coords, bounded by |amplitude|."""

    amplitude: float
    freq_u: float = 1.5
    freq_v: float = 2.0
    phase_u: float = 0.7
    phase_v: float = 0.3

    def height(self, xp: Tensor, yp: Tensor, w: float, h: float) -> Tensor:
        a = torch.sin(2 * math.pi * self.freq_u * (xp / w) + self.phase_u)
        b = torch.sin(2 * math.pi * self.freq_v * (yp / h) + self.phase_v)
        return self.amplitude * a * b


@dataclass
class StaticSurface:
    plane: PlaneGeometry
    material: Material
    heightfield: HeightField | None = None


@dataclass
class DynamicObject:
    """Rigid textured quad translating along a scripted trajectory."""

    plane: PlaneGeometry  # geometry at t = 0
    material: Material
    velocity: tuple = (0.0, 0.0, 0.0)  # world units per frame

    def plane_at(self, t: float) -> PlaneGeometry:
        offset = torch.tensor(self.velocity, dtype=self.plane.center.dtype) * t
        return PlaneGeometry(self.plane.basis, self.plane.center + offset,
                             self.plane.w, self.plane.h)

    def offset_between(self, t0: float, t1: float) -> Tensor:
        return torch.tensor(self.velocity, dtype=torch.float64) * (t1 - t0)


@dataclass
class SyntheticScene:
    intrinsics: CameraIntrinsics
    poses: list[Pose]
    static_surfaces: list[StaticSurface]
    dynamic_objects: list[DynamicObject] = field(default_factory=list)
    name: str = "scene"
    seed: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.poses)


@dataclass
class GroundTruth:
    """Held-out data never exposed to training."""

    novel_poses: list[Pose]
    novel_images: Tensor  # [M, H, W, 3]
    novel_depths: Tensor  # [M, H, W]
    novel_masks: Tensor  # [M, H, W] bool
    plane_params: list[PlaneGeometry]
    normal_maps: Tensor  # [N, H, W, 3] world-frame normals of the input frames


class DegenerateCameraError(RuntimeError):
    pass


def _intersect_rect(plane: PlaneGeometry, origin: Tensor, dirs: Tensor):
    """(t, uv, normal-sign, hit) of rays against a rectangle, [P]-batched."""
    n = plane.basis[:, 2].to(dirs.dtype)
    c = plane.center.to(dirs.dtype)
    denom = dirs @ n
    ok = denom.abs() >= 1e-12
    t = ((c - origin) @ n) / torch.where(ok, denom, torch.ones_like(denom))
    ok = ok & (t > 1e-9)
    hp = origin + t[:, None] * dirs
    p = (hp - c) @ plane.basis.to(dirs.dtype)
    u = p[:, 0] / float(plane.w) + 0.5
    v = p[:, 1] / float(plane.h) + 0.5
    ok = ok & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    return t, torch.stack([u, v], dim=-1), ok


def _march_heightfield(surface: StaticSurface, origin: Tensor, dirs: Tensor,
                       steps: int = 96):
    """Ray-march g(t) = z_p(t) - h(x_p, y_p) inside the bump slab; secant refine."""
    plane, hf = surface.plane, surface.heightfield
    b = plane.basis.to(dirs.dtype)
    c = plane.center.to(dirs.dtype)
    o_p = (origin - c) @ b
    d_p = dirs @ b
    amp = abs(hf.amplitude) * 1.05 + 1e-9
    dz = d_p[:, 2]
    ok = dz.abs() >= 1e-12
    safe = torch.where(ok, dz, torch.ones_like(dz))
    t_a = (amp - o_p[2]) / safe  # o_p is one origin shared by every ray
    t_b = (-amp - o_p[2]) / safe
    t0 = torch.minimum(t_a, t_b).clamp_min(1e-9)
    t1 = torch.maximum(t_a, t_b)
    ok = ok & (t1 > 1e-9)

    def g(t):
        p = o_p + t[:, None] * d_p
        return (p[:, 2] - hf.height(p[:, 0], p[:, 1], float(plane.w), float(plane.h)),
                p)

    ts = torch.linspace(0, 1, steps, dtype=dirs.dtype)
    t_prev = t0
    g_prev, _ = g(t_prev)
    t_hit = torch.full_like(t0, float("inf"))
    found = torch.zeros_like(ok)
    for i in range(1, steps):
        t_cur = t0 + (t1 - t0) * ts[i]
        g_cur, _ = g(t_cur)
        cross = ok & ~found & (torch.sign(g_cur) != torch.sign(g_prev))
        if bool(cross.any()):
            lo = t_prev.clone()
            hi = t_cur.clone()
            glo = g_prev.clone()
            ghi = g_cur.clone()
            for _ in range(30):
                mid = torch.where((ghi - glo).abs() > 1e-14,
                                  lo - glo * (hi - lo) / (ghi - glo),
                                  (lo + hi) / 2)
                mid = torch.maximum(torch.minimum(mid, hi), lo)
                gm, _ = g(mid)
                use_lo = torch.sign(gm) == torch.sign(glo)
                lo = torch.where(use_lo, mid, lo)
                glo = torch.where(use_lo, gm, glo)
                hi = torch.where(use_lo, hi, mid)
                ghi = torch.where(use_lo, ghi, gm)
            t_hit = torch.where(cross, (lo + hi) / 2, t_hit)
            found = found | cross
        t_prev, g_prev = t_cur, g_cur
    _, p_hit = g(t_hit.where(found, torch.ones_like(t_hit)))
    u = p_hit[:, 0] / float(plane.w) + 0.5
    v = p_hit[:, 1] / float(plane.h) + 0.5
    found = found & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)

    # analytic surface normal of z = h(x, y): (-dh/dx, -dh/dy, 1) in plane frame
    w_, h_ = float(plane.w), float(plane.h)
    tp = 2 * math.pi
    dhdx = (hf.amplitude * tp * hf.freq_u / w_
            * torch.cos(tp * hf.freq_u * (p_hit[:, 0] / w_) + hf.phase_u)
            * torch.sin(tp * hf.freq_v * (p_hit[:, 1] / h_) + hf.phase_v))
    dhdy = (hf.amplitude * tp * hf.freq_v / h_
            * torch.sin(tp * hf.freq_u * (p_hit[:, 0] / w_) + hf.phase_u)
            * torch.cos(tp * hf.freq_v * (p_hit[:, 1] / h_) + hf.phase_v))
    n_p = torch.stack([-dhdx, -dhdy, torch.ones_like(dhdx)], dim=-1)
    n_p = n_p / torch.linalg.norm(n_p, dim=-1, keepdim=True)
    n_world = n_p @ b.T
    return t_hit, torch.stack([u, v], dim=-1), found, n_world


def _cast_frame(scene: SyntheticScene, pose: Pose, t_frame: float):
    """Exact nearest-hit cast of every pixel ray.

    Returns dict with color, depth, mask, hit surface bookkeeping needed for
    flow computation (surface kind/index and object-local world points).
    """
    K = scene.intrinsics
    origin, dirs = camera_rays(K, pose, dtype=torch.float64)
    dirs = dirs.reshape(-1, 3)
    n_pix = dirs.shape[0]
    best_t = torch.full((n_pix,), float("inf"), dtype=torch.float64)
    best_kind = torch.full((n_pix,), -1, dtype=torch.long)  # surface index; dyn offset by 1000
    best_uv = torch.zeros(n_pix, 2, dtype=torch.float64)
    best_normal = torch.zeros(n_pix, 3, dtype=torch.float64)

    for si, surf in enumerate(scene.static_surfaces):
        if surf.heightfield is None:
            tt, uv, ok = _intersect_rect(surf.plane, origin, dirs)
            n_world = surf.plane.basis[:, 2].to(torch.float64).expand(n_pix, 3)
        else:
            tt, uv, ok, n_world = _march_heightfield(surf, origin, dirs)
        closer = ok & (tt < best_t)
        best_t = torch.where(closer, tt, best_t)
        best_kind = torch.where(closer, torch.full_like(best_kind, si), best_kind)
        best_uv = torch.where(closer[:, None], uv, best_uv)
        best_normal = torch.where(closer[:, None], n_world, best_normal)

    for di, obj in enumerate(scene.dynamic_objects):
        plane_t = obj.plane_at(t_frame)
        tt, uv, ok = _intersect_rect(plane_t, origin, dirs)
        n_world = plane_t.basis[:, 2].to(torch.float64).expand(n_pix, 3)
        closer = ok & (tt < best_t)
        best_t = torch.where(closer, tt, best_t)
        best_kind = torch.where(closer, torch.full_like(best_kind, 1000 + di), best_kind)
        best_uv = torch.where(closer[:, None], uv, best_uv)
        best_normal = torch.where(closer[:, None], n_world, best_normal)

    hit = best_kind >= 0
    if not bool(hit.any()):
        raise DegenerateCameraError("frame sees no geometry")
    hit_points = origin + best_t.clamp_max(1e12)[:, None] * dirs

    # orient normals toward the camera
    to_cam = -dirs
    flip = (best_normal * to_cam).sum(-1, keepdim=True) < 0
    best_normal = torch.where(flip, -best_normal, best_normal)

    color = torch.zeros(n_pix, 3, dtype=torch.float64)
    for si, surf in enumerate(scene.static_surfaces):
        sel = best_kind == si
        if not bool(sel.any()):
            continue
        base = surf.material.texture.sample(best_uv[sel, 0], best_uv[sel, 1])
        color[sel] = surf.material.shade(base, best_normal[sel], dirs[sel])
    for di, obj in enumerate(scene.dynamic_objects):
        sel = best_kind == 1000 + di
        if not bool(sel.any()):
            continue
        base = obj.material.texture.sample(best_uv[sel, 0], best_uv[sel, 1])
        color[sel] = obj.material.shade(base, best_normal[sel], dirs[sel])

    depth = pose.apply(hit_points)[:, 2]
    depth = torch.where(hit, depth, torch.full_like(depth, float("inf")))
    h, w = K.height, K.width
    return {
        "color": color.reshape(h, w, 3),
        "depth": depth.reshape(h, w),
        "mask": (best_kind >= 1000).reshape(h, w),
        "kind": best_kind,
        "points": hit_points,
        "normals": best_normal.reshape(h, w, 3),
        "hit": hit,
    }


def _flow_between(scene: SyntheticScene, cast, t0: int, t1: int) -> Tensor:
    """Exact projected 3D-correspondence displacement from frame t0 to t1."""
    K = scene.intrinsics
    h, w = K.height, K.width
    pts = cast["points"].clone()
    kind = cast["kind"]
    for di, obj in enumerate(scene.dynamic_objects):
        sel = kind == 1000 + di
        if bool(sel.any()):
            pts[sel] = pts[sel] + obj.offset_between(t0, t1)
    proj, _ = project_point(K, scene.poses[t1], pts)
    from .geometry import pixel_grid

    base = pixel_grid(K, dtype=torch.float64).reshape(-1, 2)
    flow = proj - base
    flow = torch.where(cast["hit"][:, None], flow, torch.zeros_like(flow))
    return flow.reshape(h, w, 2)


def generate_bundle(scene: SyntheticScene, novel_poses: list[Pose] | None = None,
                    flow_offsets=(-2, -1, 1, 2)):
    """Render the scene into a SceneBundle plus a hidden GroundTruth pack."""
    n = scene.n_frames
    frames, depths, masks, normals = [], [], [], []
    casts = []
    for t in range(n):
        cast = _cast_frame(scene, scene.poses[t], t)
        casts.append(cast)
        frames.append(cast["color"])
        depths.append(cast["depth"])
        masks.append(cast["mask"])
        normals.append(cast["normals"])
    flows = {}
    for t in range(n):
        for j in flow_offsets:
            if 0 <= t + j < n:
                flows[(t, j)] = _flow_between(scene, casts[t], t, t + j).to(torch.float32)
    bundle = SceneBundle(
        intrinsics=scene.intrinsics,
        poses=scene.poses,
        frames=torch.stack(frames).to(torch.float32),
        depths=torch.stack(depths).to(torch.float32),
        masks=torch.stack(masks),
        flows=flows,
    )
    bundle.validate()

    if novel_poses is None:
        novel_poses = []
    nv_imgs, nv_depths, nv_masks = [], [], []
    for pose in novel_poses:
        t_mid = (n - 1) / 2
        cast = _cast_frame(scene, pose, t_mid)
        nv_imgs.append(cast["color"])
        nv_depths.append(cast["depth"])
        nv_masks.append(cast["mask"])
    gt = GroundTruth(
        novel_poses=novel_poses,
        novel_images=(torch.stack(nv_imgs).to(torch.float32) if nv_imgs
                      else torch.zeros(0, scene.intrinsics.height, scene.intrinsics.width, 3)),
        novel_depths=(torch.stack(nv_depths).to(torch.float32) if nv_depths
                      else torch.zeros(0, scene.intrinsics.height, scene.intrinsics.width)),
        novel_masks=(torch.stack(nv_masks) if nv_masks
                     else torch.zeros(0, scene.intrinsics.height, scene.intrinsics.width,
                                      dtype=torch.bool)),
        plane_params=[s.plane for s in scene.static_surfaces],
        normal_maps=torch.stack(normals).to(torch.float32),
    )
    return bundle, gt


def render_novel(scene: SyntheticScene, pose: Pose, t_frame: float):
    """Ground-truth render at an arbitrary pose/timestamp (color, depth, mask)."""
    cast = _cast_frame(scene, pose, t_frame)
    return cast["color"], cast["depth"], cast["mask"]


def save_groundtruth(gt: GroundTruth, path: str | Path) -> None:
    from PIL import Image

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "novel_poses": [[float(x) for x in p.matrix3x4().reshape(-1)]
                        for p in gt.novel_poses],
        "planes": [{"basis": p.basis.numpy().reshape(-1).tolist(),
                    "center": p.center.numpy().tolist(),
                    "w": float(p.w), "h": float(p.h)} for p in gt.plane_params],
    }
    (path / "groundtruth.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for i in range(gt.novel_images.shape[0]):
        img = (gt.novel_images[i].clamp(0, 1).numpy() * 255).round().astype(np.uint8)
        Image.fromarray(img).save(path / f"novel_{i:04d}.png")
        write_raster(path / f"novel_depth_{i:04d}.psdp", DEPTH_MAGIC,
                     gt.novel_depths[i].numpy())


# --- oracle renderer ------------------------------------------------------

def _oracle_sh_basis(l_max: int, v: np.ndarray) -> np.ndarray:
    """Independent scalar SH basis (numpy) for the compositing oracle."""
    x, y, z = v
    vals = [0.5 * math.sqrt(1 / math.pi)]
    if l_max >= 1:
        c = math.sqrt(3 / (4 * math.pi))
        vals += [c * y, c * z, c * x]
    if l_max >= 2:
        vals += [
            0.5 * math.sqrt(15 / math.pi) * x * y,
            0.5 * math.sqrt(15 / math.pi) * y * z,
            0.25 * math.sqrt(5 / math.pi) * (3 * z * z - 1),
            0.5 * math.sqrt(15 / math.pi) * x * z,
            0.25 * math.sqrt(15 / math.pi) * (x * x - y * y),
        ]
    if l_max >= 3:
        vals += [
            0.25 * math.sqrt(35 / (2 * math.pi)) * y * (3 * x * x - y * y),
            0.5 * math.sqrt(105 / math.pi) * x * y * z,
            0.25 * math.sqrt(21 / (2 * math.pi)) * y * (5 * z * z - 1),
            0.25 * math.sqrt(7 / math.pi) * z * (5 * z * z - 3),
            0.25 * math.sqrt(21 / (2 * math.pi)) * x * (5 * z * z - 1),
            0.25 * math.sqrt(105 / math.pi) * z * (x * x - y * y),
            0.25 * math.sqrt(35 / (2 * math.pi)) * x * (x * x - 3 * y * y),
        ]
    if l_max >= 4:
        vals += [
            0.75 * math.sqrt(35 / math.pi) * x * y * (x * x - y * y),
            0.75 * math.sqrt(35 / (2 * math.pi)) * y * z * (3 * x * x - y * y),
            0.75 * math.sqrt(5 / math.pi) * x * y * (7 * z * z - 1),
            0.75 * math.sqrt(5 / (2 * math.pi)) * y * z * (7 * z * z - 3),
            (3 / 16) * math.sqrt(1 / math.pi) * (35 * z ** 4 - 30 * z * z + 3),
            0.75 * math.sqrt(5 / (2 * math.pi)) * x * z * (7 * z * z - 3),
            (3 / 8) * math.sqrt(5 / math.pi) * (x * x - y * y) * (7 * z * z - 1),
            0.75 * math.sqrt(35 / (2 * math.pi)) * x * z * (x * x - 3 * y * y),
            (3 / 16) * math.sqrt(35 / math.pi) * (x ** 4 - 6 * x * x * y * y + y ** 4),
        ]
    return np.array(vals)


def _oracle_bilinear(grid: np.ndarray, gx: float, gy: float):
    """Scalar clamp-to-edge bilinear lookup; grid [S, S, ...]."""
    rows, cols = grid.shape[0], grid.shape[1]
    x0 = math.floor(gx)
    y0 = math.floor(gy)
    fx = gx - x0
    fy = gy - y0
    j0 = min(max(x0, 0), cols - 1)
    j1 = min(max(x0 + 1, 0), cols - 1)
    i0 = min(max(y0, 0), rows - 1)
    i1 = min(max(y0 + 1, 0), rows - 1)
    top = grid[i0, j0] * (1 - fx) + grid[i0, j1] * fx
    bot = grid[i1, j0] * (1 - fx) + grid[i1, j1] * fx
    return top * (1 - fy) + bot * fy


def oracle_render(model, K: CameraIntrinsics, pose: Pose, background=(0.0, 0.0, 0.0)):
    """Deliberately simple per-pixel reference renderer (numpy, float64).

    For every pixel: loop over all planes, gather every hit, sort far-to-near
    (ties by plane index ascending), over-composite. Defines correctness for
    the vectorized static renderer.
    """
    h, w = K.height, K.width
    r = pose.rotation.numpy()
    cam_center = pose.camera_center.numpy()
    tz_row = r[2]
    tz_off = pose.translation.numpy()[2]
    l_c = model.sh_degrees.l_max_color
    l_d = model.sh_degrees.l_max_disp
    nc_active = (min(model.active_color_bands, l_c) + 1) ** 2 \
        if model.active_color_bands is not None else (l_c + 1) ** 2
    nd_active = (min(model.active_disp_bands, l_d) + 1) ** 2 \
        if model.active_disp_bands is not None else (l_d + 1) ** 2

    planes = []
    for pl, tex in zip(model.planes, model.textures):
        planes.append((
            pl.basis.numpy(), pl.center.numpy(), float(pl.w), float(pl.h),
            tex.color_sh.detach().numpy().astype(np.float64),
            1.0 / (1.0 + np.exp(-tex.alpha_logits.detach().numpy().astype(np.float64))),
            tex.disp_sh.detach().numpy().astype(np.float64),
        ))

    color_img = np.zeros((h, w, 3))
    depth_img = np.full((h, w), np.inf)
    acc_img = np.zeros((h, w))
    bg = np.array(background, dtype=np.float64)

    for i in range(h):
        for j in range(w):
            d_cam = np.array([(j + 0.5 - K.cx) / K.fx, (i + 0.5 - K.cy) / K.fy, 1.0])
            d = r.T @ d_cam
            d = d / np.linalg.norm(d)
            basis_c = _oracle_sh_basis(l_c, d)
            basis_d = _oracle_sh_basis(l_d, d)
            basis_c[nc_active:] = 0.0
            basis_d[nd_active:] = 0.0
            frags = []
            for pi, (b, c, pw, ph, csh, alpha, dsh) in enumerate(planes):
                denom = d @ b[:, 2]
                if abs(denom) < 1e-9:
                    continue
                t = ((c - cam_center) @ b[:, 2]) / denom
                if t <= 1e-9:
                    continue
                hp = cam_center + t * d
                p = b.T @ (hp - c)
                u = p[0] / pw + 0.5
                v = p[1] / ph + 0.5
                if not (0 <= u <= 1 and 0 <= v <= 1):
                    continue
                depth = tz_row @ hp + tz_off
                if depth <= 0:
                    continue
                sd = dsh.shape[0]
                dcoef = _oracle_bilinear(dsh, u * sd - 0.5, v * sd - 0.5)
                disp = np.clip(dcoef @ basis_d, -8.0, 8.0)
                s = csh.shape[0]
                gx = u * s - 0.5 + disp[0]
                gy = v * s - 0.5 + disp[1]
                ccoef = _oracle_bilinear(csh, gx, gy)
                col = ccoef @ basis_c
                a = _oracle_bilinear(alpha, gx, gy)
                frags.append((depth, pi, col, a))
            frags.sort(key=lambda f: (-f[0], f[1]))
            out = np.zeros(3)
            transmit = 1.0
            depth_sum = 0.0
            acc = 0.0
            # far-to-near: out = sum c a prod_{nearer}(1 - a)
            for depth, pi, col, a in frags:
                out = out * (1 - a) + col * a
                depth_sum = depth_sum * (1 - a) + depth * a
                acc = acc * (1 - a) + a
            color_img[i, j] = out + bg * (1 - acc)
            acc_img[i, j] = acc
            if acc > 1e-4:
                depth_img[i, j] = depth_sum / acc
    return (torch.from_numpy(color_img), torch.from_numpy(depth_img),
            torch.from_numpy(acc_img))


# --- standard scene suite -------------------------------------------------

def _pose_lookat(position, yaw: float = 0.0, pitch: float = 0.0) -> Pose:
    """World->camera pose for a camera at `position`, +z forward, yaw about y."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    ry = torch.tensor([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=torch.float64)
    rx = torch.tensor([[1, 0, 0], [0, cp, -sp], [0, sp, cp]], dtype=torch.float64)
    r_c2w = ry @ rx
    r = r_c2w.T
    p = torch.tensor(position, dtype=torch.float64)
    return Pose(r, -(r @ p))


def _basis_from_normal(normal) -> Tensor:
    n = torch.tensor(normal, dtype=torch.float64)
    n = n / torch.linalg.norm(n)
    helper = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
    if abs(float(n[1])) > 0.9:
        helper = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    u = torch.linalg.cross(helper, n)
    u = u / torch.linalg.norm(u)
    v = torch.linalg.cross(n, u)
    return torch.stack([u, v, n], dim=1)


def _rect(center, normal, w, h) -> PlaneGeometry:
    return PlaneGeometry(_basis_from_normal(normal),
                         torch.tensor(center, dtype=torch.float64), w, h)


def _default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    return CameraIntrinsics(fx=width * 1.0, fy=width * 1.0,
                            cx=width / 2, cy=height / 2,
                            width=width, height=height)


def _sweep_poses(n: int, span: float = 0.5, z0: float = 0.0,
                 yaw_span: float = 0.06) -> list[Pose]:
    poses = []
    for t in range(n):
        a = (t / max(n - 1, 1)) - 0.5
        poses.append(_pose_lookat((a * span, 0.05 * math.sin(a * 6), z0),
                                  yaw=-a * yaw_span))
    return poses


def make_flatland(n_frames: int = 12, width: int = 160, height: int = 90,
                  seed: int = 7) -> SyntheticScene:
    """Three textured planes: a big back wall and two tilted panels."""
    surfaces = [
        StaticSurface(_rect((0, 0, 6.0), (0, 0, -1), 14.0, 9.0),
                      Material(ProceduralTexture.random(seed), 0.0)),
        StaticSurface(_rect((-1.1, 0.2, 3.6), (0.35, 0, -1), 1.8, 1.5),
                      Material(ProceduralTexture.random(seed + 1), 0.0)),
        StaticSurface(_rect((1.2, -0.3, 4.4), (-0.25, 0.1, -1), 2.0, 1.6),
                      Material(ProceduralTexture.random(seed + 2), 0.0)),
    ]
    return SyntheticScene(_default_intrinsics(width, height),
                          _sweep_poses(n_frames, span=0.7),
                          surfaces, name="flatland", seed=seed)


def make_box6(n_frames: int = 8, width: int = 120, height: int = 90,
              seed: int = 11) -> SyntheticScene:
    """Six-rectangle room seen from inside."""
    surfaces = [
        StaticSurface(_rect((0, 0, 7.0), (0, 0, -1), 8.0, 6.0),
                      Material(ProceduralTexture.random(seed), 0.0)),  # back
        StaticSurface(_rect((-4.0, 0, 3.5), (1, 0, 0), 7.0, 6.0),
                      Material(ProceduralTexture.random(seed + 1), 0.0)),  # left
        StaticSurface(_rect((4.0, 0, 3.5), (-1, 0, 0), 7.0, 6.0),
                      Material(ProceduralTexture.random(seed + 2), 0.0)),  # right
        StaticSurface(_rect((0, 3.0, 3.5), (0, -1, 0), 8.0, 7.0),
                      Material(ProceduralTexture.random(seed + 3), 0.0)),  # ceiling
        StaticSurface(_rect((0, -3.0, 3.5), (0, 1, 0), 8.0, 7.0),
                      Material(ProceduralTexture.random(seed + 4), 0.0)),  # floor
        StaticSurface(_rect((0.5, 0.2, 4.5), (0.2, -0.1, -1), 1.6, 1.2),
                      Material(ProceduralTexture.random(seed + 5), 0.0)),  # panel
    ]
    # wide-angle camera: at fx = width the side walls would sit outside every
    # pixel ray until past the backdrop, leaving four faces unobserved
    intr = CameraIntrinsics(fx=width * 0.5, fy=width * 0.5,
                            cx=width / 2, cy=height / 2,
                            width=width, height=height)
    return SyntheticScene(intr,
                          _sweep_poses(n_frames, span=0.8, yaw_span=0.1),
                          surfaces, name="box6", seed=seed)


def make_bumpy(n_frames: int = 12, width: int = 160, height: int = 90,
               seed: int = 17, specular: bool = True,
               amplitude: float = 0.25) -> SyntheticScene:
    """A back wall plus a bumpy height-field quad, optionally specular."""
    bump_mat = Material(ProceduralTexture.random(seed + 1, cells=10),
                        specular_strength=0.45 if specular else 0.0,
                        specular_exponent=10.0)
    surfaces = [
        StaticSurface(_rect((0, 0, 7.0), (0, 0, -1), 16.0, 10.0),
                      Material(ProceduralTexture.random(seed), 0.0)),
        StaticSurface(_rect((0, 0, 4.0), (0, 0, -1), 3.2, 2.4),
                      bump_mat, heightfield=HeightField(amplitude)),
    ]
    return SyntheticScene(_default_intrinsics(width, height),
                          _sweep_poses(n_frames, span=1.6, yaw_span=0.25),
                          surfaces, name="bumpy", seed=seed)


def make_mover(n_frames: int = 16, width: int = 160, height: int = 90,
               seed: int = 23) -> SyntheticScene:
    """A textured quad crossing a room left to right."""
    surfaces = [
        StaticSurface(_rect((0, 0, 7.0), (0, 0, -1), 16.0, 10.0),
                      Material(ProceduralTexture.random(seed), 0.0)),
        StaticSurface(_rect((0, -2.2, 4.0), (0, 1, 0), 12.0, 7.0),
                      Material(ProceduralTexture.random(seed + 1), 0.0)),  # floor
    ]
    span = 2.4
    obj = DynamicObject(
        plane=_rect((-span / 2, -0.2, 3.0), (0, 0, -1), 0.9, 1.3),
        material=Material(ProceduralTexture.random(seed + 2, cells=6)),
        velocity=(span / max(n_frames - 1, 1), 0.0, 0.0),
    )
    return SyntheticScene(_default_intrinsics(width, height),
                          _sweep_poses(n_frames, span=0.5, yaw_span=0.05),
                          surfaces, [obj], name="mover", seed=seed)


def make_orbit(n_frames: int = 16, width: int = 120, height: int = 90,
               seed: int = 31) -> SyntheticScene:
    """Camera arc with weak parallax around a few planes."""
    surfaces = [
        StaticSurface(_rect((0, 0, 6.0), (0, 0, -1), 14.0, 10.0),
                      Material(ProceduralTexture.random(seed), 0.0)),
        StaticSurface(_rect((-0.8, 0.3, 4.2), (0.2, 0, -1), 1.5, 1.2),
                      Material(ProceduralTexture.random(seed + 1), 0.0)),
        StaticSurface(_rect((0.9, -0.4, 4.8), (-0.15, 0, -1), 1.4, 1.1),
                      Material(ProceduralTexture.random(seed + 2), 0.0)),
    ]
    poses = []
    radius = 0.35
    for t in range(n_frames):
        a = (t / max(n_frames - 1, 1) - 0.5) * 0.9
        pos = (radius * math.sin(a), 0.0, radius * (1 - math.cos(a)))
        poses.append(_pose_lookat(pos, yaw=-a * 0.5))
    return SyntheticScene(_default_intrinsics(width, height), poses,
                          surfaces, name="orbit", seed=seed)


def bench_plane_model(n_planes: int = 64, texture_size: int = 128,
                      fov_width: float = 4.0, fov_height: float = 2.25,
                      seed: int = 7):
    """A benchmark model whose planes tile the view frustum wall to wall.

    The first 64 planes cover an 11x6 grid across the full image at z = 4
    (with a small overlap margin and random tilts), so every pixel does real
    sampling/compositing work. Additional planes repeat the grid on deeper
    layers scaled to span the same field of view, which makes the per-frame
    workload grow roughly linearly with plane count instead of adding
    frustum-culled freeloaders.
    """
    from .geometry import axis_angle_to_matrix
    from .static_renderer import StaticModel
    from .textures import PlaneTexture, ShBasisDegree

    gen = torch.Generator().manual_seed(seed)
    degrees = ShBasisDegree()
    cols, rows, per_layer = 11, 6, 64
    planes, textures = [], []
    for i in range(n_planes):
        layer, j = divmod(i, per_layer)
        r, c = divmod(j, cols)
        r = min(r, rows - 1)  # the 3 overflow tiles double up on the last row
        z = 4.0 + 1.2 * layer
        scale = z / 4.0
        w = fov_width / cols * 1.12 * scale
        h = fov_height / rows * 1.12 * scale
        center = torch.tensor([
            (c - (cols - 1) / 2) * fov_width / cols * scale,
            (r - (rows - 1) / 2) * fov_height / rows * scale,
            z,
        ], dtype=torch.float64)
        center += torch.randn(3, generator=gen, dtype=torch.float64) * 0.02 * scale
        tilt = torch.randn(3, generator=gen, dtype=torch.float64) * 0.08
        planes.append(PlaneGeometry(axis_angle_to_matrix(tilt), center, w, h))
        tex = PlaneTexture.zeros(degrees, size=texture_size, disp_size=32)
        tex.color_sh[..., 0].uniform_(0.0, 1.0, generator=gen)
        tex.alpha_logits.fill_(3.0)
        textures.append(tex)
    return StaticModel(planes, textures, degrees)


SCENES = {
    "flatland": make_flatland,
    "box6": make_box6,
    "bumpy": make_bumpy,
    "mover": make_mover,
    "orbit": make_orbit,
}
