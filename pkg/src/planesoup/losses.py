"""Training loss recipe: photometric + DSSIM, masked static photometric,
mask regularizers, depth alignment and multi-scale smoothness, plane
transparency total variation, flow refinement terms, and optional
scene-flow regularization (default off).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import torch
import torch.nn.functional as F
from torch import Tensor

BCE_LOGIT_CLAMP = 15.0


@dataclass
class LossWeights:
    gamma: float = 0.2  # DSSIM share inside the photometric loss
    rho_full: float = 10.0
    rho_s: float = 10.0
    rho_percep: float = 1.0
    mu_preproc: float = 0.05  # decays linearly to 0 over the first half of training
    mu_0: float = 1.5
    mu_1: float = 0.0015
    mu_bce: float = 0.5
    mu_smooth: float = 0.1
    sigma_full: float = 0.1
    sigma_s: float = 0.1
    sigma_smooth: float = 1.0
    sigma_smooth_s: float = 0.1
    eta_flow: float = 10.0
    eta_alpha: float = 10.0
    beta_depth: float = 1e-3
    beta_cycle: float = 1e-2
    beta_smooth: float = 1e-3
    omega: int = 2
    scene_flow_enabled: bool = False
    # Optional perceptual term, (pred [H,W,3], target [H,W,3]) -> scalar tensor.
    perceptual_fn: Callable | None = None


def _gaussian_kernel(size: int = 11, sigma: float = 1.5, dtype=torch.float32) -> Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] @ g[None, :]


def ssim_map(a: Tensor, b: Tensor, window: int = 11, sigma: float = 1.5) -> Tensor:
    """Per-pixel SSIM of two [H, W, C] images (C1=0.01^2, C2=0.03^2, L=1)."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ch = a.shape[-1]
    kernel = _gaussian_kernel(window, sigma, a.dtype).expand(ch, 1, window, window)
    pad = window // 2

    def filt(img):
        x = img.permute(2, 0, 1)[None]
        x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
        return F.conv2d(x, kernel, groups=ch)[0].permute(1, 2, 0)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def photometric_map(pred: Tensor, target: Tensor, gamma: float) -> Tensor:
    """Per-pixel photometric error map [H, W]: (1-gamma) MSE + gamma DSSIM."""
    sq = ((pred - target) ** 2).mean(dim=-1)
    if gamma == 0.0:
        return sq
    dssim = ((1 - ssim_map(pred, target)) / 2).mean(dim=-1)
    return (1 - gamma) * sq + gamma * dssim


def photometric(pred: Tensor, target: Tensor, gamma: float = 0.2) -> Tensor:
    return photometric_map(pred, target, gamma).mean()


def _weighted_mean(err_map: Tensor, weight: Tensor) -> Tensor:
    total = weight.sum()
    if total.item() <= 0:
        return torch.zeros((), dtype=err_map.dtype)
    return (err_map * weight).sum() / total


def masked_static_photometric(static_pred: Tensor, target: Tensor,
                              mask_pre: Tensor, mask_learned: Tensor,
                              gamma: float = 0.2) -> Tensor:
    """min over the two mask weightings of the static photometric loss.

    Each branch weights the per-pixel error by (1 - mask) and normalizes by
    the weight sum; the min is taken between whole-image values, with the
    gradient flowing only through the selected branch.
    """
    err = photometric_map(static_pred, target, gamma)
    a = _weighted_mean(err, 1 - mask_pre)
    b = _weighted_mean(err, 1 - mask_learned)
    return a if a.item() <= b.item() else b


def _bce(logits: Tensor, target: Tensor) -> Tensor:
    logits = logits.clamp(-BCE_LOGIT_CLAMP, BCE_LOGIT_CLAMP)
    return F.binary_cross_entropy_with_logits(logits, target)


def edge_aware_smooth(field_2d: Tensor, guide: Tensor) -> Tensor:
    """mean(|dx f| exp(-|dx I|) + |dy f| exp(-|dy I|)); guide is [H, W, C] or [H, W]."""
    if guide.dim() == 2:
        guide = guide[..., None]
    gx = (guide[:, 1:] - guide[:, :-1]).abs().mean(dim=-1)
    gy = (guide[1:] - guide[:-1]).abs().mean(dim=-1)
    fx = (field_2d[:, 1:] - field_2d[:, :-1]).abs()
    fy = (field_2d[1:] - field_2d[:-1]).abs()
    return (fx * torch.exp(-gx)).mean() + (fy * torch.exp(-gy)).mean()


def mask_losses(mask_logits: Tensor, mask_pre: Tensor, image: Tensor,
                weights: LossWeights, iteration: int, total_iterations: int) -> Tensor:
    """Mask supervision + sparsity + smoothness.

    mu_preproc(iter) * BCE(M*, M) + mu_0 * Phi0(M*) + mu_1 * |M*|_1
    + mu_bce * BCE(M*, 1) + mu_smooth * edge-aware smoothness,
    Phi0(x) = mean(2 sigmoid(5x) - 1). The preproc BCE weight decays
    linearly to 0 over the first half of training.
    """
    m = torch.sigmoid(mask_logits)
    decay = max(0.0, 1.0 - 2.0 * iteration / max(total_iterations, 1))
    phi0 = (2 * torch.sigmoid(5 * m) - 1).mean()
    loss = (weights.mu_preproc * decay * _bce(mask_logits, mask_pre.to(mask_logits.dtype))
            + weights.mu_0 * phi0
            + weights.mu_1 * m.abs().mean()
            + weights.mu_bce * _bce(mask_logits, torch.ones_like(mask_logits))
            + weights.mu_smooth * edge_aware_smooth(m, image))
    return loss


def _normalized_depth_error(pred: Tensor, target: Tensor) -> Tensor:
    """|pred - target| / |pred + target| per pixel; sentinel pixels excluded."""
    finite = torch.isfinite(pred) & torch.isfinite(target)
    p = torch.where(finite, pred, torch.ones_like(pred))
    t = torch.where(finite, target, torch.ones_like(target))
    err = (p - t).abs() / (p + t).abs().clamp_min(1e-8)
    return torch.where(finite, err, torch.zeros_like(err)), finite


def multiscale_depth_smooth(depth: Tensor, image: Tensor, scales: int = 4) -> Tensor:
    """Edge-aware smoothness over `scales` octaves (2x box decimation).

    Each scale's depth is normalized by its mean so the term is scale free.
    Sentinel (+inf) pixels are replaced by the finite mean first.
    """
    finite = torch.isfinite(depth)
    fill = depth[finite].mean() if bool(finite.any()) else torch.ones((), dtype=depth.dtype)
    d = torch.where(finite, depth, fill)
    img = image
    total = torch.zeros((), dtype=depth.dtype)
    for s in range(scales):
        total = total + edge_aware_smooth(d / d.mean().clamp_min(1e-8), img)
        if min(d.shape[0], d.shape[1]) < 4:
            break
        d = _box_down(d)
        img = _box_down_image(img)
    return total


def _box_down(x: Tensor) -> Tensor:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4


def _box_down_image(x: Tensor) -> Tensor:
    if x.dim() == 2:
        return _box_down(x)
    return torch.stack([_box_down(x[..., c]) for c in range(x.shape[-1])], dim=-1)


def depth_losses(full_depth: Tensor, static_depth: Tensor, depth_pre: Tensor,
                 mask_pre: Tensor, mask_learned: Tensor, image: Tensor,
                 weights: LossWeights) -> Tensor:
    """Depth alignment against the precomputed depth plus smoothness terms."""
    err_full, _ = _normalized_depth_error(full_depth, depth_pre)
    align_full = err_full.mean()
    err_s, finite_s = _normalized_depth_error(static_depth, depth_pre)
    wa = (1 - mask_pre) * finite_s
    wb = (1 - mask_learned) * finite_s
    a = _weighted_mean(err_s, wa)
    b = _weighted_mean(err_s, wb)
    align_s = a if a.item() <= b.item() else b
    loss = (weights.sigma_full * align_full
            + weights.sigma_s * align_s
            + weights.sigma_smooth * multiscale_depth_smooth(full_depth, image)
            + weights.sigma_smooth_s * multiscale_depth_smooth(static_depth, image))
    return loss


def alpha_tv(plane_alpha: Tensor) -> Tensor:
    """Mean over planes of mean(|dx alpha| + |dy alpha|); input [N_p, H, W]."""
    if plane_alpha.shape[0] == 0:
        return torch.zeros((), dtype=plane_alpha.dtype)
    dx = (plane_alpha[:, :, 1:] - plane_alpha[:, :, :-1]).abs().mean(dim=(1, 2))
    dy = (plane_alpha[:, 1:, :] - plane_alpha[:, :-1, :]).abs().mean(dim=(1, 2))
    return (dx + dy).mean()


def flow_refine_losses(flow_fwd: Tensor, flow_bwd: Tensor,
                       frame_t: Tensor, frame_tj: Tensor,
                       gamma: float = 0.2) -> Tensor:
    """Photometric backwarp error of the flow plus forward-backward cycle error."""
    from .dynamic_renderer import _backwarp

    warped = _backwarp(frame_tj, flow_fwd)
    pho = photometric(warped, frame_t, gamma)
    back = _backwarp(flow_bwd, flow_fwd)
    cycle = torch.linalg.norm(flow_fwd + back, dim=-1).mean()
    return pho + cycle


def scene_flow_losses(flow_grids, dyn_depths, poses, intrinsics, optical_flows,
                      masks, weights: LossWeights):
    """Scene-flow regularization over per-frame low-resolution 3D motion grids.

    Disabled (weights.scene_flow_enabled False) returns plain 0.0 and
    contributes no gradients. See planesoup.sceneflow for the field type.
    """
    if not weights.scene_flow_enabled:
        return 0.0
    from .sceneflow import evaluate_scene_flow_losses

    return evaluate_scene_flow_losses(flow_grids, dyn_depths, poses, intrinsics,
                                      optical_flows, masks, weights)


def total_loss(*, full_rgb, full_depth, static_rgb, static_depth, plane_alpha,
               frame, depth_pre, mask_pre, mask_logits,
               weights: LossWeights, iteration: int, total_iterations: int,
               flow_terms: Tensor | float = 0.0,
               scene_flow_terms: Tensor | float = 0.0):
    """Weighted total, mirroring the training-loss assembly, plus a per-term
    breakdown dict for logging. Aborts on a non-finite term."""
    terms: dict[str, Tensor] = {}
    terms["pho_full"] = weights.rho_full * photometric(full_rgb, frame, weights.gamma)
    terms["pho_static"] = weights.rho_s * masked_static_photometric(
        static_rgb, frame, mask_pre, torch.sigmoid(mask_logits), weights.gamma)
    if weights.perceptual_fn is not None:
        terms["pho_percep"] = weights.rho_percep * weights.perceptual_fn(full_rgb, frame)
    terms["mask"] = mask_losses(mask_logits, mask_pre, frame, weights,
                                iteration, total_iterations)
    terms["depth"] = depth_losses(full_depth, static_depth, depth_pre,
                                  mask_pre, torch.sigmoid(mask_logits), frame, weights)
    if plane_alpha is not None:
        terms["alpha_tv"] = weights.eta_alpha * alpha_tv(plane_alpha)
    if isinstance(flow_terms, Tensor) or flow_terms:
        terms["flow"] = weights.eta_flow * torch.as_tensor(flow_terms)
    if isinstance(scene_flow_terms, Tensor) or scene_flow_terms:
        terms["scene_flow"] = torch.as_tensor(scene_flow_terms)
    total = sum(terms.values())
    for name, value in terms.items():
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise FloatingPointError(f"non-finite loss term: {name}")
    return total, {k: float(torch.as_tensor(v).detach()) for k, v in terms.items()}
