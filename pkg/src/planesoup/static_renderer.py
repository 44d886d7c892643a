"""Soup-of-planes renderer: per-pixel ray-plane intersection, view-specific
texture fetch, per-pixel depth sorting, and back-to-front over-compositing.

Fragment order after sorting is far-to-near; ties are broken by plane index
ascending so renders are reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .geometry import CameraIntrinsics, PlaneGeometry, Pose, camera_rays
from .textures import (PackedTextures, PlaneTexture, ShBasisDegree, band_mask,
                       sample_rgba_at, sample_rgba_atlas, sample_rgba_batched,
                       sh_basis)

DEPTH_SENTINEL = float("inf")
DEPTH_ALPHA_FLOOR = 1e-4

# cap on candidate-pixel tensor elements ([planes, bbox pixels]) per batch
RASTER_CHUNK_BUDGET = 1 << 22


@dataclass
class StaticModel:
    planes: list[PlaneGeometry]
    textures: list[PlaneTexture]
    sh_degrees: ShBasisDegree = field(default_factory=ShBasisDegree)
    active_color_bands: int | None = None  # None = all configured bands
    active_disp_bands: int | None = None
    packed: PackedTextures | None = None  # optional stacked-texture fast path

    def __post_init__(self):
        if len(self.planes) != len(self.textures):
            raise ValueError("planes and textures must have the same length")


def pack_model(model: StaticModel, atlas: bool = False) -> StaticModel:
    """Equivalent model whose textures are views into stacked tensors.

    Rendering a packed model batches texture fetches across planes; pack
    once before rendering the same model many times. With `atlas=True`
    the sampling atlases are prebuilt too (read-only inference models
    only; the atlases are detached copies of the textures). Falls back to
    the original model when textures disagree in resolution or SH degree.
    """
    if not model.textures:
        return model
    if model.packed is not None:
        if atlas and model.packed.rgba_atlas is None:
            model.packed.build_atlas()
        return model
    shapes = {(t.color_sh.shape, t.alpha_logits.shape, t.disp_sh.shape)
              for t in model.textures}
    if len(shapes) != 1:
        return model
    packed = PackedTextures.from_list(model.textures)
    if atlas:
        packed.build_atlas()
    return StaticModel(model.planes, packed.views(), model.sh_degrees,
                       model.active_color_bands, model.active_disp_bands,
                       packed=packed)


@dataclass
class RenderRequest:
    intrinsics: CameraIntrinsics
    pose: Pose  # world -> camera
    t: int = 0
    render_depth: bool = True
    static_only: bool = False


@dataclass
class RenderOutput:
    color: Tensor  # [H, W, 3]
    depth: Tensor | None  # [H, W], +inf where nothing was hit
    alpha: Tensor  # [H, W] accumulated alpha
    mask: Tensor | None = None  # [H, W] dynamic soft mask (full pipeline only)
    plane_alpha: Tensor | None = None  # [N_p, H, W] warped per-plane transparencies


@dataclass
class FragmentBuffer:
    """Dense per-pixel fragment slots; slot axis first, pixels flattened."""

    depth: Tensor  # [K, P], +inf in empty slots
    rgb: Tensor  # [K, P, 3]
    alpha: Tensor  # [K, P], 0 in empty slots
    valid: Tensor  # [K, P] bool
    height: int
    width: int
    plane_alpha: Tensor | None = None  # [N_p, H, W], for the transparency TV loss
    sorted: bool = False  # slots already far-to-near (ties plane ascending)


def _check_finite(model: StaticModel) -> None:
    # An f64 sum is a single cheap reduction; any inf or nan in the input
    # makes it non-finite (inf - inf turns into nan, and nan propagates),
    # so the precise elementwise scan only runs when something is wrong.
    for i, pl in enumerate(model.planes):
        for name, t in (("basis", pl.basis), ("center", pl.center)):
            if not torch.isfinite(t.sum(dtype=torch.float64)):
                raise FloatingPointError(f"non-finite values in plane {i} {name}")
    if model.packed is not None:
        for name, t in (("color_sh", model.packed.color_sh),
                        ("alpha_logits", model.packed.alpha_logits),
                        ("disp_sh", model.packed.disp_sh)):
            if not torch.isfinite(t.sum(dtype=torch.float64)):
                for i, tex in enumerate(model.textures):
                    v = getattr(tex, name)
                    if not torch.isfinite(v.sum(dtype=torch.float64)):
                        raise FloatingPointError(f"non-finite values in plane {i} {name}")
                raise FloatingPointError(f"non-finite values in packed {name}")
        return
    for i, tex in enumerate(model.textures):
        for name, t in (("color_sh", tex.color_sh), ("alpha_logits", tex.alpha_logits),
                        ("disp_sh", tex.disp_sh)):
            if not torch.isfinite(t.sum(dtype=torch.float64)):
                raise FloatingPointError(f"non-finite values in plane {i} {name}")


def rasterize_planes(model: StaticModel, req: RenderRequest,
                     dtype=torch.float32, timings: dict | None = None,
                     collect_plane_alpha: bool = False) -> FragmentBuffer:
    """Gather every plane hit of every pixel ray into per-pixel fragment slots."""
    K, pose = req.intrinsics, req.pose
    h, w = K.height, K.width
    n_pix = h * w

    t0 = time.perf_counter()
    origin, dirs = camera_rays(K, pose, dtype=dtype)
    dirs = dirs.reshape(n_pix, 3)
    # The SH view direction is the pixel ray itself (hit - camera center is
    # t * dir with t > 0), so one basis evaluation covers every plane.
    basis_c = sh_basis(model.sh_degrees.l_max_color, dirs)
    l_disp = model.sh_degrees.l_max_disp
    if l_disp <= model.sh_degrees.l_max_color:
        # flattened (l, m) ordering makes lower degrees a prefix
        basis_d = basis_c[:, :(l_disp + 1) ** 2]
    else:
        basis_d = sh_basis(l_disp, dirs)
    if model.active_color_bands is not None:
        basis_c = basis_c * band_mask(model.sh_degrees.l_max_color,
                                      model.active_color_bands, dtype)
    if model.active_disp_bands is not None:
        basis_d = basis_d * band_mask(model.sh_degrees.l_max_disp,
                                      model.active_disp_bands, dtype)
    if timings is not None:
        timings["texture_resolve"] = timings.get("texture_resolve", 0.0) + time.perf_counter() - t0

    t0 = time.perf_counter()
    rot = pose.rotation.to(dtype)
    trans = pose.translation.to(dtype)
    n_planes = len(model.planes)
    sample_time = 0.0

    flat_plane: list[Tensor] = []  # fragment lists, plane-index ascending
    flat_pix: list[Tensor] = []
    flat_depth: list[Tensor] = []
    flat_rgb: list[Tensor] = []
    flat_alpha: list[Tensor] = []

    if n_planes:
        # camera-frame z of a hit at ray parameter t is t * (R d)_z: the ray
        # origin is the camera center, which maps to z = 0
        dz_pix = dirs @ rot[2]
        # the atlas path is read-only (atlases are detached copies), so the
        # stacked plane geometry can be reused across frames
        cache = (model.packed.plane_cache
                 if model.packed is not None
                 and model.packed.rgba_atlas is not None else None)
        stacks = cache.get(dtype) if cache is not None else None
        if stacks is None:
            basis_stack = torch.stack([pl.basis.to(dtype) for pl in model.planes])
            centers = torch.stack([pl.center.to(dtype) for pl in model.planes])
            extents = torch.tensor([[float(pl.w), float(pl.h)] for pl in model.planes],
                                   dtype=dtype)
            if cache is not None:
                cache[dtype] = (basis_stack, centers, extents)
        else:
            basis_stack, centers, extents = stacks

        # Candidate pixels per plane: the bbox of the projected corners. The
        # rectangle is convex, so with every corner in front of the camera its
        # image lies inside the corners' bbox; planes reaching behind the
        # camera get the full frame, planes fully behind get nothing.
        with torch.no_grad():
            off_u = basis_stack[:, :, 0] * (extents[:, :1] / 2)
            off_v = basis_stack[:, :, 1] * (extents[:, 1:] / 2)
            corners = (centers[:, None] + torch.stack([
                -off_u - off_v, off_u - off_v, -off_u + off_v, off_u + off_v,
            ], dim=1))  # [N, 4, 3]
            cam = corners @ rot.T + trans
            cz = cam[..., 2]
            frontal = (cz > 1e-9).all(dim=1)
            partial = (cz > 1e-9).any(dim=1) & ~frontal
            safe_z = cz.clamp_min(1e-9)
            px = K.fx * cam[..., 0] / safe_z + K.cx
            py = K.fy * cam[..., 1] / safe_z + K.cy
            x_lo = (px.amin(dim=1) - 0.5).floor().long()
            x_hi = (px.amax(dim=1) - 0.5).ceil().long()
            y_lo = (py.amin(dim=1) - 0.5).floor().long()
            y_hi = (py.amax(dim=1) - 0.5).ceil().long()
            off_frame = (x_lo > w - 1) | (x_hi < 0) | (y_lo > h - 1) | (y_hi < 0)
            x_lo = x_lo.clamp(0, w - 1)
            x_hi = x_hi.clamp(0, w - 1)
            y_lo = y_lo.clamp(0, h - 1)
            y_hi = y_hi.clamp(0, h - 1)
            x_lo[partial] = 0
            y_lo[partial] = 0
            x_hi[partial] = w - 1
            y_hi[partial] = h - 1
            bw = x_hi - x_lo + 1
            area = bw * (y_hi - y_lo + 1)
            area = torch.where(frontal & off_frame, torch.zeros_like(area), area)
            area = torch.where(frontal | partial, area, torch.zeros_like(area))

        # The atlas path samples textures once over the whole flat fragment
        # list and restores plane order afterwards, so it can visit planes
        # in bbox-area order, which keeps the padded candidate matrices
        # tight. The differentiable paths sample per chunk and need plane
        # order preserved (the packed sampler slices contiguous ranges).
        use_atlas = (model.packed is not None
                     and model.packed.rgba_atlas is not None
                     and model.packed.rgba_atlas.dtype == dtype
                     and not torch.is_grad_enabled())
        if use_atlas:
            visit = torch.argsort(area)
            visit = visit[area[visit] > 0]
        else:
            visit = torch.arange(n_planes)
        flat_uv: list[Tensor] = []

        pos = 0
        while pos < visit.numel():
            end = pos + 1
            b_max = max(int(area[visit[pos]]), 1)
            while end < visit.numel():
                b_next = max(b_max, int(area[visit[end]]))
                if b_next * (end + 1 - pos) > RASTER_CHUNK_BUDGET:
                    break
                b_max = b_next
                end += 1
            ids = visit[pos:end]
            pos = end
            area_c = area[ids]
            b = int(area_c.max())
            if b == 0:
                continue
            bas = basis_stack[ids]
            cen = centers[ids]
            ext = extents[ids]
            k = torch.arange(b)
            bw_c = bw[ids].clamp_min(1)[:, None]
            row = k[None] // bw_c
            col = k[None] - row * bw_c
            pix = (y_lo[ids, None] + row) * w + x_lo[ids, None] + col
            mask = k[None] < area_c[:, None]
            pix = torch.where(mask, pix, torch.zeros_like(pix))

            cand = dirs[pix]  # [C, B, 3]
            d3 = torch.einsum("cbk,ckj->cbj", cand, bas)  # ray dir, plane basis
            denom = d3[..., 2]
            ok = denom.abs() >= 1e-9
            rel = cen - origin
            tnum = (rel * bas[:, :, 2]).sum(-1)[:, None]
            tt = tnum / torch.where(ok, denom, torch.ones_like(denom))
            ok = ok & (tt > 1e-9) & mask
            pu0 = -(rel * bas[:, :, 0]).sum(-1)[:, None]  # (origin - cen) . u
            pv0 = -(rel * bas[:, :, 1]).sum(-1)[:, None]
            u = (pu0 + tt * d3[..., 0]) / ext[:, 0, None] + 0.5
            v = (pv0 + tt * d3[..., 1]) / ext[:, 1, None] + 0.5
            ok = ok & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
            depth = tt * dz_pix[pix]  # camera-space z
            ok = ok & (depth > 0)
            if not bool(ok.any()):
                continue
            # park padded/missed coords mid-texture so stray values cannot
            # poison texture gradients through the batched sampler
            half = torch.full_like(u, 0.5)
            u = torch.where(ok, u, half)
            v = torch.where(ok, v, half)

            ci, bi = ok.nonzero(as_tuple=True)
            flat_plane.append(ids[ci])
            flat_pix.append(pix[ci, bi])
            flat_depth.append(depth[ci, bi])
            if use_atlas:
                flat_uv.append(torch.stack([u[ci, bi], v[ci, bi]], dim=-1))
                continue
            ts = time.perf_counter()
            bc = basis_c[pix]  # [C, B, Kc]
            bd = basis_d[pix]
            if model.packed is not None:
                lo, hi = int(ids[0]), int(ids[-1]) + 1
                uv = torch.stack([u, v], dim=-1)
                color, alpha = sample_rgba_batched(model.packed, lo, hi, uv, bc, bd)
                flat_rgb.append(color[ci, bi])
                flat_alpha.append(alpha[ci, bi])
            else:
                for local in range(ids.numel()):
                    mrow = ok[local]
                    if not bool(mrow.any()):
                        continue
                    uv = torch.stack([u[local][mrow], v[local][mrow]], dim=-1)
                    color, alpha = sample_rgba_at(model.textures[int(ids[local])], uv,
                                                  bc[local][mrow], bd[local][mrow])
                    flat_rgb.append(color)
                    flat_alpha.append(alpha)
            sample_time += time.perf_counter() - ts
    if timings is not None:
        timings["rasterize"] = (timings.get("rasterize", 0.0)
                                + time.perf_counter() - t0 - sample_time)

    t0 = time.perf_counter()
    plane_idx = torch.cat(flat_plane) if flat_plane else torch.zeros(0, dtype=torch.long)
    pix_idx = torch.cat(flat_pix) if flat_pix else torch.zeros(0, dtype=torch.long)
    depth_all = torch.cat(flat_depth) if flat_depth else torch.zeros(0, dtype=dtype)
    presorted = False
    if n_planes and flat_pix and flat_uv:
        # atlas path: one texture pass for the whole frame
        uv_all = torch.cat(flat_uv)
        bcf = basis_c[pix_idx]
        if l_disp <= model.sh_degrees.l_max_color and model.active_color_bands is None \
                and model.active_disp_bands is None:
            bdf = bcf[:, :(l_disp + 1) ** 2]
        else:
            bdf = basis_d[pix_idx]
        rgb_all, alpha_all = sample_rgba_atlas(model.packed, plane_idx, uv_all, bcf, bdf)
        sample_time += time.perf_counter() - t0

        # one keyed sort puts the flat list straight into composite order:
        # pixel ascending, then depth descending (positive-float bits keep
        # their order as integers), then plane index ascending on exact ties
        t0 = time.perf_counter()
        pix_bits = max(n_pix - 1, 1).bit_length()
        plane_bits = max(n_planes - 1, 1).bit_length()
        if pix_bits + plane_bits + 31 <= 63:
            depth_bits = depth_all.view(torch.int32).to(torch.int64)
            key = ((pix_idx << (31 + plane_bits))
                   + ((0x7FFFFFFF - depth_bits) << plane_bits) + plane_idx)
            order = torch.argsort(key)
            plane_idx = plane_idx[order]
            pix_idx = pix_idx[order]
            depth_all = depth_all[order]
            rgb_all = rgb_all[order]
            alpha_all = alpha_all[order]
            presorted = True
        else:
            perm = torch.argsort(plane_idx, stable=True)
            plane_idx = plane_idx[perm]
            pix_idx = pix_idx[perm]
            depth_all = depth_all[perm]
            rgb_all = rgb_all[perm]
            alpha_all = alpha_all[perm]
        if timings is not None:
            timings["sort"] = timings.get("sort", 0.0) + time.perf_counter() - t0
        t0 = time.perf_counter()
    else:
        rgb_all = torch.cat(flat_rgb) if flat_rgb else torch.zeros(0, 3, dtype=dtype)
        alpha_all = torch.cat(flat_alpha) if flat_alpha else torch.zeros(0, dtype=dtype)
    m = pix_idx.numel()

    # slot of a fragment = its rank among the pixel's fragments; with the
    # flat list in plane order the stable depth sort later breaks
    # exact-depth ties by plane index ascending, matching the reference
    # renderer (the keyed sort above yields slots already depth-ordered)
    if m:
        if presorted:
            sp = pix_idx
            depth_o, rgb_o, alpha_o = depth_all, rgb_all, alpha_all
        else:
            order = torch.argsort(pix_idx, stable=True)
            sp = pix_idx[order]
            depth_o, rgb_o, alpha_o = depth_all[order], rgb_all[order], alpha_all[order]
        first = torch.ones_like(sp, dtype=torch.bool)
        first[1:] = sp[1:] != sp[:-1]
        group = torch.cumsum(first.long(), dim=0) - 1
        pos = torch.arange(m)
        slot = pos - pos[first][group]
        k_slots = int(slot.max()) + 1
    else:
        sp = slot = None
        k_slots = 0

    depth_buf = torch.full((k_slots, n_pix), DEPTH_SENTINEL, dtype=dtype)
    rgb_buf = torch.zeros(k_slots, n_pix, 3, dtype=dtype)
    alpha_buf = torch.zeros(k_slots, n_pix, dtype=dtype)
    valid_buf = torch.zeros(k_slots, n_pix, dtype=torch.bool)
    plane_alpha = (torch.zeros(len(model.planes), h, w, dtype=dtype)
                   if collect_plane_alpha else None)
    if m:
        depth_buf = depth_buf.index_put((slot, sp), depth_o)
        rgb_buf = rgb_buf.index_put((slot, sp), rgb_o)
        alpha_buf = alpha_buf.index_put((slot, sp), alpha_o)
        valid_buf[slot, sp] = True
        if plane_alpha is not None:
            plane_alpha = plane_alpha.index_put(
                (plane_idx, pix_idx // w, pix_idx % w), alpha_all)
    if timings is not None:
        timings["texture_resolve"] = (timings.get("texture_resolve", 0.0)
                                      + time.perf_counter() - t0 + sample_time)

    return FragmentBuffer(depth_buf, rgb_buf, alpha_buf, valid_buf, h, w,
                          plane_alpha=plane_alpha, sorted=presorted)


def sort_fragments(frags: FragmentBuffer, timings: dict | None = None) -> FragmentBuffer:
    """Stable per-pixel sort by depth descending (far to near).

    Slots are filled in plane-index order, so the stable sort breaks exact
    depth ties by plane index ascending. Empty slots (+inf depth) sort to
    the far end and contribute nothing.
    """
    t0 = time.perf_counter()
    if frags.sorted or frags.depth.shape[0] <= 1:
        return frags
    order = torch.argsort(frags.depth.detach(), dim=0, descending=True, stable=True)
    out = FragmentBuffer(
        depth=torch.gather(frags.depth, 0, order),
        rgb=torch.gather(frags.rgb, 0, order[..., None].expand(-1, -1, 3)),
        alpha=torch.gather(frags.alpha, 0, order),
        valid=torch.gather(frags.valid, 0, order),
        height=frags.height,
        width=frags.width,
        plane_alpha=frags.plane_alpha,
    )
    if timings is not None:
        timings["sort"] = timings.get("sort", 0.0) + time.perf_counter() - t0
    return out


def composite(frags: FragmentBuffer, background=None,
              timings: dict | None = None):
    """Over-composite sorted (far-to-near) fragments.

    Returns (color [H, W, 3], depth [H, W], accumulated alpha [H, W]).
    The depth composite is normalized by the accumulated alpha where it
    exceeds a small floor; below the floor the depth is the +inf sentinel.
    """
    t0 = time.perf_counter()
    h, w = frags.height, frags.width
    n_pix = h * w
    dtype = frags.rgb.dtype
    if background is None:
        background = torch.zeros(3, dtype=dtype)
    background = torch.as_tensor(background, dtype=dtype)

    if frags.depth.shape[0] == 0:
        color = background.expand(h, w, 3).clone()
        depth = torch.full((h, w), DEPTH_SENTINEL, dtype=dtype)
        return color, depth, torch.zeros(h, w, dtype=dtype)

    alpha = torch.where(frags.valid, frags.alpha, torch.zeros_like(frags.alpha))
    one_minus = 1 - alpha
    # transmittance through all fragments nearer than slot j
    incl = torch.flip(torch.cumprod(torch.flip(one_minus, [0]), dim=0), [0])
    excl = torch.cat([incl[1:], torch.ones(1, n_pix, dtype=dtype)], dim=0)
    weight = alpha * excl  # [K, P]
    acc = weight.sum(dim=0)
    color = (weight[..., None] * frags.rgb).sum(dim=0)
    color = color + background * (1 - acc)[..., None]
    depth_vals = torch.where(frags.valid, frags.depth, torch.zeros_like(frags.depth))
    depth_sum = (weight * depth_vals).sum(dim=0)
    depth = torch.where(acc > DEPTH_ALPHA_FLOOR, depth_sum / acc.clamp_min(DEPTH_ALPHA_FLOOR),
                        torch.full_like(depth_sum, DEPTH_SENTINEL))
    if timings is not None:
        timings["composite"] = timings.get("composite", 0.0) + time.perf_counter() - t0
    return color.reshape(h, w, 3), depth.reshape(h, w), acc.reshape(h, w)


def render_static(model: StaticModel, req: RenderRequest, background=None,
                  dtype=torch.float32, timings: dict | None = None,
                  collect_plane_alpha: bool = False, validate: bool = True):
    """Full static path: rasterize + sort + composite.

    Returns a RenderOutput; when collect_plane_alpha is set the per-plane
    warped transparency images are attached as `plane_alpha` on the output.
    `validate=False` skips the model finiteness scan; callers rendering the
    same model many times should validate once and disable it per frame.
    """
    if validate:
        _check_finite(model)
    frags = rasterize_planes(model, req, dtype=dtype, timings=timings,
                             collect_plane_alpha=collect_plane_alpha)
    frags = sort_fragments(frags, timings=timings)
    color, depth, acc = composite(frags, background=background, timings=timings)
    return RenderOutput(color=color, depth=depth if req.render_depth else None,
                        alpha=acc, plane_alpha=frags.plane_alpha)
