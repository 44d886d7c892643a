"""Differentiation contract and finite-difference validation harness.

Gradients are produced by reverse-mode autodiff over the tensor ops used in
the renderer and losses. Every differentiable kernel exposed by the library
is registered here with a sampler that builds a random scalar-valued probe;
fd_check compares its analytic gradient against central differences with a
best-of epsilon schedule, excluding probes that sit next to a branch
boundary (sorting ties, rectangle edges, clamps) where the derivative is
legitimately one-sided.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
from torch import Tensor

EPS_SCHEDULE = (1e-4, 1e-5, 1e-6)
REL_TOL_F64 = 1e-4
REL_TOL_F32 = 1e-2
KINK_MARGIN = 1e-3


@dataclass
class ParamGroup:
    """Named view over the tensors of one optimizable quantity."""

    name: str
    tensors: list[Tensor]

    @property
    def values(self) -> Tensor:
        return torch.cat([t.detach().reshape(-1) for t in self.tensors])

    @property
    def gradient(self) -> Tensor:
        parts = []
        for t in self.tensors:
            g = t.grad if t.grad is not None else torch.zeros_like(t)
            parts.append(g.reshape(-1))
        return torch.cat(parts)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None


def backward(loss: Tensor, groups: list[ParamGroup]) -> dict[str, Tensor]:
    """Populate gradients for every group; zero for non-influencing params.

    Raises FloatingPointError naming the group and flat index of the first
    non-finite gradient entry.
    """
    for g in groups:
        g.zero_grad()
    loss.backward()
    out = {}
    for g in groups:
        grad = g.gradient
        bad = ~torch.isfinite(grad)
        if bool(bad.any()):
            idx = int(bad.nonzero()[0])
            raise FloatingPointError(
                f"non-finite gradient in group '{g.name}' at flat index {idx}")
        out[g.name] = grad
    return out


@dataclass
class FdReport:
    kernel: str
    max_rel_err: float
    n_checked: int
    n_kink_excluded: int
    failures: list = field(default_factory=list)  # (sample, coord, rel_err)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def fd_check(kernel: str, n_samples: int = 25, coords_per_sample: int = 5,
             eps_schedule=EPS_SCHEDULE, seed: int = 0,
             rel_tol: float = REL_TOL_F64) -> FdReport:
    """Validate the registered kernel's gradient with central differences.

    Each probe perturbs one flat coordinate of one parameter tensor; the FD
    estimate is the best match over the epsilon schedule. Probes whose FD
    estimates disagree across epsilons by more than 10% (or that the kernel's
    own kink test flags) count as kink-adjacent and are excluded.
    """
    spec = KERNELS[kernel]
    gen = torch.Generator().manual_seed(seed)
    t0 = time.perf_counter()
    max_err = 0.0
    checked = 0
    kinky = 0
    failures = []
    for s in range(n_samples):
        params, closure = spec(gen)
        tensors = list(params.values())
        loss = closure()
        grads = torch.autograd.grad(loss, tensors, allow_unused=True)
        flats = [t.detach().reshape(-1) for t in tensors]
        sizes = torch.tensor([f.numel() for f in flats])
        total = int(sizes.sum())
        picks = torch.randperm(total, generator=gen)[:coords_per_sample]
        for flat_idx in picks.tolist():
            ti = int(torch.searchsorted(sizes.cumsum(0), flat_idx, right=True))
            local = flat_idx - int(sizes[:ti].sum())
            g_ad = grads[ti]
            g_val = 0.0 if g_ad is None else float(g_ad.reshape(-1)[local])
            estimates = []
            for eps in eps_schedule:
                base = float(flats[ti][local])
                with torch.no_grad():
                    flats[ti][local] = base + eps
                    up = float(closure())
                    flats[ti][local] = base - eps
                    dn = float(closure())
                    flats[ti][local] = base
                estimates.append((up - dn) / (2 * eps))
            spread = max(estimates) - min(estimates)
            scale = max(abs(e) for e in estimates) + abs(g_val)
            if scale > 1e-8 and spread / max(scale, 1e-8) > 0.1:
                kinky += 1
                continue
            err = min(_rel_err(g_val, e) for e in estimates)
            checked += 1
            max_err = max(max_err, err)
            if err > rel_tol:
                failures.append((s, flat_idx, err))
    return FdReport(kernel=kernel, max_rel_err=max_err, n_checked=checked,
                    n_kink_excluded=kinky, failures=failures,
                    seconds=time.perf_counter() - t0)


# --- kernel registry ------------------------------------------------------

KERNELS: dict = {}


def register(name):
    def deco(fn):
        KERNELS[name] = fn
        return fn
    return deco


def _unit(gen, n=3):
    v = torch.randn(n, generator=gen, dtype=torch.float64)
    return v / v.norm()


def _weights_like(t: Tensor, gen) -> Tensor:
    return torch.randn(t.shape, generator=gen, dtype=t.dtype)


@register("sh_contraction")
def _k_sh(gen):
    from .textures import num_sh_coeffs, sh_basis

    l_max = int(torch.randint(0, 5, (1,), generator=gen))
    coeffs = torch.randn(4, num_sh_coeffs(l_max), generator=gen,
                         dtype=torch.float64, requires_grad=True)
    dirs = torch.stack([_unit(gen) for _ in range(4)])
    w = torch.randn(4, generator=gen, dtype=torch.float64)

    def closure():
        basis = sh_basis(l_max, dirs)
        return ((coeffs * basis).sum(-1) * w).sum()

    return {"coeffs": coeffs}, closure


@register("bilinear_sample")
def _k_bilinear(gen):
    from .textures import bilinear_sample

    grid = torch.randn(7, 7, 3, generator=gen, dtype=torch.float64,
                       requires_grad=True)
    # keep lookups off texel-center kinks and inside the interior
    def off_kink():
        # integer +- [0.2, 0.45]: safely inside one bilinear cell
        base = torch.randint(1, 6, (5,), generator=gen).to(torch.float64)
        offs = 0.2 + 0.25 * torch.rand(5, generator=gen, dtype=torch.float64)
        sign = torch.where(torch.rand(5, generator=gen) > 0.5, 1.0, -1.0)
        return (base + sign * offs).clamp(0.3, 5.7).requires_grad_(True)

    gx = off_kink()
    gy = off_kink()
    w = torch.randn(5, 3, generator=gen, dtype=torch.float64)

    def closure():
        return (bilinear_sample(grid, gx, gy) * w).sum()

    return {"grid": grid, "gx": gx, "gy": gy}, closure


@register("texture_rgba")
def _k_texture(gen):
    from .textures import PlaneTexture, ShBasisDegree, sample_rgba_at, sh_basis

    deg = ShBasisDegree(2, 1)
    s, sd = 6, 3
    tex = PlaneTexture(
        color_sh=0.3 * torch.randn(s, s, 3, 9, generator=gen,
                                   dtype=torch.float64, requires_grad=True),
        alpha_logits=torch.randn(s, s, generator=gen, dtype=torch.float64,
                                 requires_grad=True),
        disp_sh=0.2 * torch.randn(sd, sd, 2, 4, generator=gen,
                                  dtype=torch.float64, requires_grad=True))
    uv = (torch.rand(6, 2, generator=gen, dtype=torch.float64) * 0.7 + 0.15) \
        .requires_grad_(True)
    d = torch.stack([_unit(gen) for _ in range(6)])
    wc = torch.randn(6, 3, generator=gen, dtype=torch.float64)
    wa = torch.randn(6, generator=gen, dtype=torch.float64)

    def closure():
        bc = sh_basis(deg.l_max_color, d)
        bd = sh_basis(deg.l_max_disp, d)
        color, alpha = sample_rgba_at(tex, uv, bc, bd)
        return (color * wc).sum() + (alpha * wa).sum()

    return {"color_sh": tex.color_sh, "alpha": tex.alpha_logits,
            "disp_sh": tex.disp_sh, "uv": uv}, closure


@register("composite")
def _k_composite(gen):
    from .static_renderer import FragmentBuffer, composite, sort_fragments

    k, p = 4, 9
    depth = (torch.rand(k, p, generator=gen, dtype=torch.float64) * 4 + 1) \
        .requires_grad_(True)
    rgb = torch.rand(k, p, 3, generator=gen, dtype=torch.float64,
                     requires_grad=True)
    alpha = (torch.rand(k, p, generator=gen, dtype=torch.float64)
             * 0.8 + 0.1).requires_grad_(True)
    valid = torch.rand(k, p, generator=gen) > 0.25
    w_c = torch.randn(3, 3, 3, generator=gen, dtype=torch.float64)
    w_d = torch.randn(3, 3, generator=gen, dtype=torch.float64)
    bg = torch.rand(3, generator=gen, dtype=torch.float64)

    def closure():
        buf = FragmentBuffer(depth=depth, rgb=rgb, alpha=alpha, valid=valid,
                             height=3, width=3)
        buf = sort_fragments(buf)
        color, dep, acc = composite(buf, background=bg)
        dep = torch.where(torch.isinf(dep), torch.zeros_like(dep), dep)
        return (color * w_c).sum() + (dep * w_d).sum()

    return {"depth": depth, "rgb": rgb, "alpha": alpha}, closure


@register("plane_intersection")
def _k_intersect(gen):
    from .geometry import axis_angle_to_matrix

    aa = (0.3 * torch.randn(3, generator=gen, dtype=torch.float64)) \
        .requires_grad_(True)
    center = (torch.randn(3, generator=gen, dtype=torch.float64)
              + torch.tensor([0.0, 0.0, 5.0])).requires_grad_(True)
    d = torch.stack([_unit(gen) for _ in range(4)])
    d = d * torch.sign(d[:, 2:3]).where(d[:, 2:3].abs() > 0.2,
                                        torch.ones_like(d[:, 2:3]))
    d = d / d.norm(dim=-1, keepdim=True)
    origin = torch.zeros(3, dtype=torch.float64)
    w = torch.randn(4, 3, generator=gen, dtype=torch.float64)

    def closure():
        basis = axis_angle_to_matrix(aa[None])[0]
        n = basis[:, 2]
        denom = d @ n
        t = ((center - origin) @ n) / denom
        hp = origin + t[:, None] * d
        local = (hp - center) @ basis
        return (local * w).sum()

    return {"axis_angle": aa, "center": center}, closure


@register("fitting_objective")
def _k_fitobj(gen):
    from .geometry import axis_angle_to_matrix, finite_plane_distance

    aa = (0.2 * torch.randn(3, generator=gen, dtype=torch.float64)) \
        .requires_grad_(True)
    center = torch.randn(3, generator=gen, dtype=torch.float64) \
        .requires_grad_(True)
    log_wh = torch.randn(2, generator=gen, dtype=torch.float64) \
        .requires_grad_(True)
    pts = 2.0 * torch.randn(12, 3, generator=gen, dtype=torch.float64)
    nrm = torch.stack([_unit(gen) for _ in range(12)])

    def closure():
        basis = axis_angle_to_matrix(aa[None])[0]
        wh = torch.exp(log_wh)
        local = (pts - center) @ basis
        dist = finite_plane_distance(local, wh[0], wh[1])
        cos = nrm @ basis[:, 2]
        return dist.sum() + 10.0 * (1 - cos ** 2).sum() + 1e-2 * wh.prod()

    return {"axis_angle": aa, "center": center, "log_wh": log_wh}, closure


@register("splat")
def _k_splat(gen):
    from .dynamic_renderer import SplatConfig, splat_dynamic
    from .geometry import CameraIntrinsics, Pose

    h = w = 6
    k = CameraIntrinsics(fx=8.0, fy=8.0, cx=3.0, cy=3.0, width=w, height=h)
    rgb = torch.rand(h, w, 3, generator=gen, dtype=torch.float64,
                     requires_grad=True)
    mask = (torch.rand(h, w, generator=gen, dtype=torch.float64)
            * 0.8 + 0.1).requires_grad_(True)
    depth = (torch.rand(h, w, generator=gen, dtype=torch.float64) * 1.6 + 3.2) \
        .requires_grad_(True)
    # two constant pixels pin z_min/z_max: the depth-range normalization is a
    # stop-gradient, so FD must never move the extrema
    pin = torch.zeros(h, w, dtype=torch.bool)
    pin[0, 0] = pin[h - 1, w - 1] = True
    pin_vals = torch.where(torch.arange(h * w).reshape(h, w) == 0,
                           torch.tensor(2.9, dtype=torch.float64),
                           torch.tensor(5.1, dtype=torch.float64))
    src = Pose.identity()
    shift = 0.05 * torch.randn(3, generator=gen, dtype=torch.float64)
    dst = Pose(torch.eye(3, dtype=torch.float64), shift)
    cfg = SplatConfig()
    wc = torch.randn(h, w, 3, generator=gen, dtype=torch.float64)
    wm = torch.randn(h, w, generator=gen, dtype=torch.float64)

    def closure():
        d = torch.where(pin, pin_vals, depth)
        out_rgb, out_m, out_d = splat_dynamic(rgb, mask, d, k, src, k, dst, cfg)
        return (out_rgb * wc).sum() + (out_m * wm).sum()

    return {"rgb": rgb, "mask": mask, "depth": depth}, closure


@register("compose_final")
def _k_compose(gen):
    from .dynamic_renderer import SplatConfig, compose_final

    h = w = 5
    s_rgb = torch.rand(h, w, 3, generator=gen, dtype=torch.float64,
                       requires_grad=True)
    s_d = (torch.rand(h, w, generator=gen, dtype=torch.float64) * 3 + 2) \
        .requires_grad_(True)
    d_rgb = torch.rand(h, w, 3, generator=gen, dtype=torch.float64,
                       requires_grad=True)
    d_m = (torch.rand(h, w, generator=gen, dtype=torch.float64) * 0.9) \
        .requires_grad_(True)
    d_d = (torch.rand(h, w, generator=gen, dtype=torch.float64) * 3 + 2) \
        .requires_grad_(True)
    cfg = SplatConfig()
    wc = torch.randn(h, w, 3, generator=gen, dtype=torch.float64)
    wd = torch.randn(h, w, generator=gen, dtype=torch.float64)

    def closure():
        color, depth, m = compose_final(s_rgb, s_d, d_rgb, d_m, d_d, cfg, 1.0)
        return (color * wc).sum() + (depth * wd).sum() + m.sum()

    return {"static_rgb": s_rgb, "static_depth": s_d, "dyn_rgb": d_rgb,
            "dyn_mask": d_m, "dyn_depth": d_d}, closure


@register("blend_neighbors")
def _k_blend(gen):
    from .dynamic_renderer import (DynamicLayer, FlowField, SplatConfig,
                                   blend_neighbors)

    h = w = 6
    def layer():
        return DynamicLayer(
            rgb=torch.rand(h, w, 3, generator=gen, dtype=torch.float64,
                           requires_grad=True),
            mask_logits=torch.randn(h, w, generator=gen, dtype=torch.float64,
                                    requires_grad=True),
            depth=torch.full((h, w), 4.0, dtype=torch.float64))

    c = layer()
    nb = layer()
    flow = (0.8 * torch.randn(h, w, 2, generator=gen, dtype=torch.float64)) \
        .requires_grad_(True)
    valid = (torch.rand(h, w, generator=gen) > 0.3).to(torch.float64)
    cfg = SplatConfig()
    wc = torch.randn(h, w, 3, generator=gen, dtype=torch.float64)
    wm = torch.randn(h, w, generator=gen, dtype=torch.float64)

    def closure():
        rgb, m = blend_neighbors(c, {1: nb}, {1: FlowField(flow, valid)}, cfg)
        return (rgb * wc).sum() + (m * wm).sum()

    return {"c_rgb": c.rgb, "c_mask": c.mask_logits, "n_rgb": nb.rgb,
            "n_mask": nb.mask_logits, "flow": flow}, closure


@register("photometric")
def _k_photo(gen):
    from .losses import photometric

    h = w = 14
    pred = torch.rand(h, w, 3, generator=gen, dtype=torch.float64,
                      requires_grad=True)
    gt = torch.rand(h, w, 3, generator=gen, dtype=torch.float64)

    def closure():
        return photometric(pred, gt)

    return {"pred": pred}, closure


@register("mask_losses")
def _k_mask(gen):
    from .losses import LossWeights, mask_losses

    h = w = 8
    logits = torch.randn(h, w, generator=gen, dtype=torch.float64,
                         requires_grad=True)
    pre = torch.rand(h, w, generator=gen, dtype=torch.float64)
    img = torch.rand(h, w, 3, generator=gen, dtype=torch.float64)

    def closure():
        return mask_losses(logits, pre, img, LossWeights(), iteration=10,
                           total_iterations=100)

    return {"logits": logits}, closure


@register("depth_terms")
def _k_depth(gen):
    from .losses import LossWeights, depth_losses

    h, w = 12, 16
    full = (torch.rand(h, w, generator=gen, dtype=torch.float64) * 3 + 1) \
        .requires_grad_(True)
    static = (torch.rand(h, w, generator=gen, dtype=torch.float64) * 3 + 1) \
        .requires_grad_(True)
    pre = torch.rand(h, w, generator=gen, dtype=torch.float64) * 3 + 1
    mask_pre = torch.rand(h, w, generator=gen, dtype=torch.float64)
    mask_l = torch.rand(h, w, generator=gen, dtype=torch.float64)
    img = torch.rand(h, w, 3, generator=gen, dtype=torch.float64)

    def closure():
        return depth_losses(full, static, pre, mask_pre, mask_l, img,
                            LossWeights())

    return {"full": full, "static": static}, closure


@register("alpha_tv")
def _k_tv(gen):
    from .losses import alpha_tv

    a = torch.rand(3, 8, 8, generator=gen, dtype=torch.float64,
                   requires_grad=True)

    def closure():
        return alpha_tv(a)

    return {"alpha": a}, closure


@register("scene_flow")
def _k_sceneflow(gen):
    from .geometry import CameraIntrinsics, Pose
    from .sceneflow import SceneFlowGrids, evaluate_scene_flow_losses

    h = w = 8
    n = 3
    k = CameraIntrinsics(fx=10.0, fy=10.0, cx=4.0, cy=4.0, width=w, height=h)
    poses = [Pose(torch.eye(3, dtype=torch.float64),
                  torch.tensor([0.02 * t, 0.0, 0.0], dtype=torch.float64))
             for t in range(n)]
    from .losses import LossWeights

    grids = SceneFlowGrids(
        fwd=(0.05 * torch.randn(n, 4, 4, 3, generator=gen,
                                dtype=torch.float64)).requires_grad_(True),
        bwd=(0.05 * torch.randn(n, 4, 4, 3, generator=gen,
                                dtype=torch.float64)).requires_grad_(True),
        height=h, width=w)
    depths = torch.rand(n, h, w, generator=gen, dtype=torch.float64) * 2 + 3
    masks = torch.ones(n, h, w, dtype=torch.float64)
    flows = {}
    for t in range(n - 1):
        flows[(t, 1)] = 0.3 * torch.randn(h, w, 2, generator=gen,
                                          dtype=torch.float64)
        flows[(t + 1, -1)] = -flows[(t, 1)]
    weights = LossWeights(scene_flow_enabled=True)

    def closure():
        return evaluate_scene_flow_losses(grids, depths, poses, k, flows,
                                          masks, weights)

    return {"fwd": grids.fwd, "bwd": grids.bwd}, closure


def run_suite(n_samples: int = 25, coords_per_sample: int = 5,
              seed: int = 0, kernels=None, rel_tol: float = REL_TOL_F64):
    """Run fd_check over every registered kernel; returns list[FdReport]."""
    names = kernels if kernels is not None else sorted(KERNELS)
    return [fd_check(name, n_samples=n_samples,
                     coords_per_sample=coords_per_sample, seed=seed,
                     rel_tol=rel_tol) for name in names]
