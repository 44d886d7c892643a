"""Loss terms against closed forms, scipy SSIM, and simple oracles."""

import numpy as np
import torch
from skimage.metrics import structural_similarity

from planesoup.losses import (LossWeights, alpha_tv, edge_aware_smooth,
                              masked_static_photometric,
                              multiscale_depth_smooth, photometric,
                              photometric_map, ssim_map, total_loss)


def _img(gen, h=24, w=32, c=3):
    return torch.rand(h, w, c, generator=gen, dtype=torch.float64)


def test_ssim_identical_images_is_one():
    gen = torch.Generator().manual_seed(0)
    a = _img(gen)
    s = ssim_map(a, a)
    assert float((s - 1.0).abs().max()) < 1e-9


def test_ssim_matches_skimage():
    gen = torch.Generator().manual_seed(1)
    a = _img(gen, 48, 48, 1)[..., 0]
    b = (a + 0.1 * torch.randn(48, 48, generator=gen, dtype=torch.float64)).clamp(0, 1)
    got = float(ssim_map(a[..., None], b[..., None]).mean())
    ref = structural_similarity(a.numpy(), b.numpy(), data_range=1.0,
                                gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    # boundary handling differs (reflect pad vs crop): compare loosely
    assert abs(got - ref) < 0.02


def test_photometric_zero_at_equality():
    gen = torch.Generator().manual_seed(2)
    a = _img(gen)
    assert float(photometric(a, a)) < 1e-12


def test_photometric_gamma_mixes_mse_and_dssim():
    gen = torch.Generator().manual_seed(3)
    a, b = _img(gen), _img(gen)
    mse_only = photometric_map(a, b, gamma=0.0)
    assert float((mse_only - ((a - b) ** 2).mean(dim=-1)).abs().max()) < 1e-12
    mixed = photometric_map(a, b, gamma=0.2)
    dssim = ((1 - ssim_map(a, b)) / 2).mean(dim=-1)
    ref = 0.8 * ((a - b) ** 2).mean(dim=-1) + 0.2 * dssim
    assert float((mixed - ref).abs().max()) < 1e-12


def test_masked_static_photometric_takes_min_branch():
    gen = torch.Generator().manual_seed(4)
    target = _img(gen)
    pred = target.clone()
    pred[:, :16] += 0.5  # corrupt the left half
    left = torch.zeros(24, 32, dtype=torch.float64)
    left[:, :16] = 1.0  # mask_pre hides the corrupted half
    right = 1.0 - left  # mask_learned hides the clean half
    # gamma=0 keeps the error map local (SSIM windows would bleed the
    # corruption across the mask boundary)
    got = masked_static_photometric(pred, target, left, right, gamma=0.0)
    # the pre-mask branch sees only clean pixels -> near zero, and wins
    assert float(got) < 1e-9


def test_masked_static_photometric_all_masked_is_zero():
    gen = torch.Generator().manual_seed(5)
    a, b = _img(gen), _img(gen)
    ones = torch.ones(24, 32, dtype=torch.float64)
    assert float(masked_static_photometric(a, b, ones, ones)) == 0.0


def test_edge_aware_smooth_constant_field_is_zero():
    gen = torch.Generator().manual_seed(6)
    guide = _img(gen)
    f = torch.full((24, 32), 3.0, dtype=torch.float64)
    assert float(edge_aware_smooth(f, guide)) == 0.0


def test_edge_aware_smooth_discounts_field_edges_at_image_edges():
    # the same field discontinuity costs less where the guide also jumps
    f = torch.zeros(8, 8, dtype=torch.float64)
    f[:, 4:] = 1.0
    flat_guide = torch.zeros(8, 8, 3, dtype=torch.float64)
    edge_guide = flat_guide.clone()
    edge_guide[:, 4:] = 5.0
    assert float(edge_aware_smooth(f, edge_guide)) \
        < float(edge_aware_smooth(f, flat_guide))


def test_alpha_tv_zero_for_constant_and_closed_form_for_step():
    const = torch.full((3, 8, 8), 0.4, dtype=torch.float64)
    assert float(alpha_tv(const)) == 0.0
    step = torch.zeros(1, 8, 8, dtype=torch.float64)
    step[0, :, 4:] = 1.0
    # one unit jump per row across a 7-difference-wide axis
    expect = (8 * 1.0) / (8 * 7)
    assert abs(float(alpha_tv(step)) - expect) < 1e-12
    empty = torch.zeros(0, 8, 8, dtype=torch.float64)
    assert float(alpha_tv(empty)) == 0.0


def test_multiscale_depth_smooth_handles_sentinels():
    gen = torch.Generator().manual_seed(7)
    img = _img(gen, 16, 16)
    depth = torch.full((16, 16), 4.0, dtype=torch.float64)
    depth[3, 5] = float("inf")
    val = multiscale_depth_smooth(depth, img)
    assert torch.isfinite(torch.as_tensor(val))


def test_total_loss_static_scene_runs_and_breaks_down():
    gen = torch.Generator().manual_seed(8)
    h, w = 24, 32
    frame = _img(gen, h, w)
    pred = (frame + 0.05 * torch.randn(h, w, 3, generator=gen,
                                       dtype=torch.float64)).clamp(0, 1)
    depth = torch.full((h, w), 4.0, dtype=torch.float64)
    weights = LossWeights()
    total, terms = total_loss(
        full_rgb=pred, full_depth=depth, static_rgb=pred, static_depth=depth,
        plane_alpha=torch.rand(4, h, w, generator=gen, dtype=torch.float64),
        frame=frame, depth_pre=depth,
        mask_pre=torch.zeros(h, w, dtype=torch.float64),
        mask_logits=torch.full((h, w), -6.0, dtype=torch.float64),
        weights=weights, iteration=10, total_iterations=100)
    assert torch.isfinite(total)
    for key in ("pho_full", "pho_static", "mask", "depth", "alpha_tv"):
        assert key in terms and np.isfinite(terms[key])
    # scene flow disabled -> absent from the breakdown
    assert "scene_flow" not in terms


def test_total_loss_rejects_nonfinite_term():
    gen = torch.Generator().manual_seed(9)
    h, w = 8, 8
    frame = _img(gen, h, w)
    bad = frame.clone()
    bad[0, 0, 0] = float("nan")
    import pytest

    with pytest.raises(FloatingPointError):
        total_loss(
            full_rgb=bad, full_depth=torch.ones(h, w, dtype=torch.float64),
            static_rgb=frame, static_depth=torch.ones(h, w, dtype=torch.float64),
            plane_alpha=None, frame=frame,
            depth_pre=torch.ones(h, w, dtype=torch.float64),
            mask_pre=torch.zeros(h, w, dtype=torch.float64),
            mask_logits=torch.zeros(h, w, dtype=torch.float64),
            weights=LossWeights(), iteration=0, total_iterations=10)


def test_perceptual_hook_is_called():
    gen = torch.Generator().manual_seed(10)
    h, w = 8, 8
    frame = _img(gen, h, w)
    calls = []

    def percep(pred, target):
        calls.append(1)
        return ((pred - target) ** 2).sum()

    weights = LossWeights(perceptual_fn=percep)
    total, terms = total_loss(
        full_rgb=frame, full_depth=torch.ones(h, w, dtype=torch.float64),
        static_rgb=frame, static_depth=torch.ones(h, w, dtype=torch.float64),
        plane_alpha=None, frame=frame,
        depth_pre=torch.ones(h, w, dtype=torch.float64),
        mask_pre=torch.zeros(h, w, dtype=torch.float64),
        mask_logits=torch.zeros(h, w, dtype=torch.float64),
        weights=weights, iteration=0, total_iterations=10)
    assert calls and "pho_percep" in terms
