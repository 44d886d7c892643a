"""Per-plane view-dependent textures.

Each plane carries an S x S grid of SH color coefficients and transparency
logits plus a low-resolution S_d x S_d grid of SH displacement coefficients.
Given a view direction the SH expansions resolve to a view-specific RGBA,
with the displacement shifting the color/alpha lookup in texel units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor

# Real spherical harmonics, flattened (l, m) order, bands 0..4.
SH_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
SH_C1 = 0.4886025119029199  # sqrt(3 / (4 pi))

DISP_CLAMP = 8.0  # texel units of the S x S grid


def num_sh_coeffs(l_max: int) -> int:
    return (l_max + 1) ** 2


def sh_basis(l_max: int, v: Tensor) -> Tensor:
    """Real SH basis values for unit directions v [..., 3] -> [..., (l_max+1)^2]."""
    if not 0 <= l_max <= 4:
        raise ValueError("SH degree must be in [0, 4]")
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out = [torch.full_like(x, SH_C0)]
    if l_max >= 1:
        out += [SH_C1 * y, SH_C1 * z, SH_C1 * x]
    if l_max >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            1.0925484305920792 * x * y,
            1.0925484305920792 * y * z,
            0.31539156525252005 * (3 * zz - 1),
            1.0925484305920792 * x * z,
            0.5462742152960396 * (xx - yy),
        ]
    if l_max >= 3:
        out += [
            0.5900435899266435 * y * (3 * xx - yy),
            2.890611442640554 * x * y * z,
            0.4570457994644658 * y * (5 * zz - 1),
            0.3731763325901154 * z * (5 * zz - 3),
            0.4570457994644658 * x * (5 * zz - 1),
            1.445305721320277 * z * (xx - yy),
            0.5900435899266435 * x * (xx - 3 * yy),
        ]
    if l_max >= 4:
        out += [
            2.5033429417967046 * x * y * (xx - yy),
            1.7701307697799304 * y * z * (3 * xx - yy),
            0.9461746957575601 * x * y * (7 * zz - 1),
            0.6690465435572892 * y * z * (7 * zz - 3),
            0.10578554691520431 * (35 * zz * zz - 30 * zz + 3),
            0.6690465435572892 * x * z * (7 * zz - 3),
            0.47308734787878004 * (xx - yy) * (7 * zz - 1),
            1.7701307697799304 * x * z * (xx - 3 * yy),
            0.6258357354491761 * (xx * xx - 6 * xx * yy + yy * yy),
        ]
    return torch.stack(out, dim=-1)


def band_mask(l_max: int, active_bands: int, dtype, like: Tensor | None = None) -> Tensor:
    """1.0 for coefficients of bands <= active_bands, else 0.0; [(l_max+1)^2]."""
    n = num_sh_coeffs(l_max)
    n_active = num_sh_coeffs(min(active_bands, l_max))
    m = torch.zeros(n, dtype=dtype)
    m[:n_active] = 1.0
    return m


@dataclass(frozen=True)
class ShBasisDegree:
    l_max_color: int = 3
    l_max_disp: int = 2

    def __post_init__(self):
        if not (0 <= self.l_max_color <= 4 and 0 <= self.l_max_disp <= 4):
            raise ValueError("SH degrees must be in [0, 4]")


@dataclass
class PlaneTexture:
    """SH color coefficients, alpha logits, and SH displacement coefficients."""

    color_sh: Tensor  # [S, S, 3, (l_max_color+1)^2]
    alpha_logits: Tensor  # [S, S]
    disp_sh: Tensor  # [S_d, S_d, 2, (l_max_disp+1)^2]

    @property
    def size(self) -> int:
        return self.color_sh.shape[0]

    @property
    def disp_size(self) -> int:
        return self.disp_sh.shape[0]

    @property
    def l_max_color(self) -> int:
        return int(round(math.sqrt(self.color_sh.shape[-1]))) - 1

    @property
    def l_max_disp(self) -> int:
        return int(round(math.sqrt(self.disp_sh.shape[-1]))) - 1

    @staticmethod
    def zeros(degrees: ShBasisDegree = ShBasisDegree(), size: int = 256,
              disp_size: int = 32, alpha_logit: float = -4.0,
              dtype=torch.float32) -> "PlaneTexture":
        return PlaneTexture(
            color_sh=torch.zeros(size, size, 3, num_sh_coeffs(degrees.l_max_color), dtype=dtype),
            alpha_logits=torch.full((size, size), alpha_logit, dtype=dtype),
            disp_sh=torch.zeros(disp_size, disp_size, 2, num_sh_coeffs(degrees.l_max_disp), dtype=dtype),
        )


@dataclass
class PackedTextures:
    """Every plane's texture stacked along a leading plane axis.

    The packed layout lets the renderer resolve fragments of many planes
    with a few batched grid_sample calls instead of one python-loop
    iteration per plane. Per-plane PlaneTexture views returned by `view`
    share storage with the packed tensors, so in-place edits through
    either side stay consistent.
    """

    color_sh: Tensor  # [N, S, S, 3, (l_max_color+1)^2]
    alpha_logits: Tensor  # [N, S, S]
    disp_sh: Tensor  # [N, S_d, S_d, 2, (l_max_disp+1)^2]
    # inference-only atlases (see build_atlas): every plane's grid side by
    # side in one image with a duplicated 1-texel border, so one
    # grid_sample call resolves fragments of all planes at once
    # color SH coefficients flattened plus the sigmoid alpha as a trailing
    # channel, so one interpolation pass resolves both
    rgba_atlas: Tensor | None = None  # [S+2, N*(S+2), 3*Kc + 1]
    disp_atlas: Tensor | None = None  # [S_d+2, N*(S_d+2), 2, Kd]
    # renderer scratch keyed by dtype: stacked plane geometry reused across
    # frames on the read-only atlas path (see rasterize_planes)
    plane_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @staticmethod
    def from_list(textures: list[PlaneTexture]) -> "PackedTextures":
        return PackedTextures(
            color_sh=torch.stack([t.color_sh for t in textures]),
            alpha_logits=torch.stack([t.alpha_logits for t in textures]),
            disp_sh=torch.stack([t.disp_sh for t in textures]),
        )

    def build_atlas(self) -> None:
        """Precompute sampling atlases; call after the textures are final.

        The atlases are detached copies: edits to the textures after this
        call are not reflected, and no gradients flow through atlas
        sampling, so the renderer only uses them under no_grad.
        """
        with torch.no_grad():
            n, s = self.color_sh.shape[0], self.color_sh.shape[1]
            rgba = torch.cat([self.color_sh.reshape(n, s, s, -1),
                              torch.sigmoid(self.alpha_logits)[..., None]], dim=-1)
            self.rgba_atlas = _tile_atlas(rgba)
            self.disp_atlas = _tile_atlas(self.disp_sh)

    @property
    def n_planes(self) -> int:
        return self.color_sh.shape[0]

    def view(self, i: int) -> PlaneTexture:
        return PlaneTexture(self.color_sh[i], self.alpha_logits[i], self.disp_sh[i])

    def views(self) -> list[PlaneTexture]:
        return [self.view(i) for i in range(self.n_planes)]


def _tile_atlas(stack: Tensor) -> Tensor:
    """[N, S, S, ...] -> [S+2, N*(S+2), ...] with duplicated 1-texel borders.

    Within each tile the duplicated border reproduces clamp-to-edge
    sampling exactly for coordinates clamped to [-1, S] (any coordinate
    further out resolves to the same edge texel either way).
    """
    n, s = stack.shape[0], stack.shape[1]
    trailing = stack.shape[3:]
    padded = torch.zeros((n, s + 2, s + 2) + trailing, dtype=stack.dtype)
    padded[:, 1:-1, 1:-1] = stack
    padded[:, 0] = padded[:, 1]
    padded[:, -1] = padded[:, -2]
    padded[:, :, 0] = padded[:, :, 1]
    padded[:, :, -1] = padded[:, :, -2]
    return padded.permute(*(1, 0, 2) + tuple(range(3, padded.dim()))).reshape(
        (s + 2, n * (s + 2)) + trailing)


def sample_rgba_atlas(packed: PackedTextures, plane_id: Tensor, uv: Tensor,
                      basis_color: Tensor, basis_disp: Tensor):
    """sample_rgba_at over a flat fragment list via the prebuilt atlases.

    plane_id: [M] long; uv: [M, 2]; basis_color/basis_disp: [M, K].
    Returns (color [M, 3], alpha [M]). Requires build_atlas() first.
    """
    dtype = uv.dtype
    m = uv.shape[0]
    s = packed.color_sh.shape[1]
    sd = packed.disp_sh.shape[1]
    off_c = (plane_id * (s + 2) + 1).to(dtype)
    off_d = (plane_id * (sd + 2) + 1).to(dtype)

    # inline clamp-to-edge bilinear lookups via grid_sample, keeping the
    # [C, M] channel-major output layout so the SH contractions below run on
    # contiguous tensors (the generic bilinear_sample wrapper transposes)
    def _lookup(atlas, gx, gy):
        rows, cols = atlas.shape[0], atlas.shape[1]
        chan = atlas.to(dtype).reshape(rows, cols, -1).permute(2, 0, 1)[None]
        nx = (2.0 * gx + 1.0) / cols - 1.0
        ny = (2.0 * gy + 1.0) / rows - 1.0
        coords = torch.stack([nx, ny], dim=-1)[None, None]
        out = torch.nn.functional.grid_sample(
            chan, coords, mode="bilinear", padding_mode="border",
            align_corners=False)
        return out[0, :, 0, :]  # [C, M], contiguous

    gx_d = (uv[:, 0] * sd - 0.5).clamp(-1.0, float(sd)) + off_d
    gy_d = (uv[:, 1] * sd - 0.5).clamp(-1.0, float(sd)) + 1.0
    disp_coeff = _lookup(packed.disp_atlas, gx_d, gy_d).reshape(2, -1, m)
    disp = torch.einsum("ckm,mk->cm", disp_coeff,
                        basis_disp).clamp(-DISP_CLAMP, DISP_CLAMP)
    gx = (uv[:, 0] * s - 0.5 + disp[0]).clamp(-1.0, float(s)) + off_c
    gy = (uv[:, 1] * s - 0.5 + disp[1]).clamp(-1.0, float(s)) + 1.0
    rgba = _lookup(packed.rgba_atlas, gx, gy)
    color = torch.einsum("ckm,mk->mc", rgba[:-1].reshape(3, -1, m),
                         basis_color)
    return color, rgba[-1]


def _grid_sample_batched(grid: Tensor, gx: Tensor, gy: Tensor) -> Tensor:
    """bilinear_sample batched over a leading plane axis.

    grid: [C, S_rows, S_cols, ...trailing]; gx/gy: [C, B].
    Returns [C, B, ...trailing] with the same clamp-to-edge convention.
    """
    c, s_rows, s_cols = grid.shape[0], grid.shape[1], grid.shape[2]
    b = gx.shape[1]
    trailing = grid.shape[3:]
    chan = grid.reshape(c, s_rows, s_cols, -1).permute(0, 3, 1, 2)
    nx = (2.0 * gx + 1.0) / s_cols - 1.0
    ny = (2.0 * gy + 1.0) / s_rows - 1.0
    coords = torch.stack([nx, ny], dim=-1)[:, None]  # [C, 1, B, 2]
    out = torch.nn.functional.grid_sample(
        chan, coords, mode="bilinear", padding_mode="border", align_corners=False)
    return out[:, :, 0, :].permute(0, 2, 1).reshape((c, b) + trailing)


def sample_rgba_batched(packed: PackedTextures, lo: int, hi: int, uv: Tensor,
                        basis_color: Tensor, basis_disp: Tensor):
    """sample_rgba_at for the plane range [lo, hi) in one batched pass.

    uv: [C, B, 2]; basis_color: [C, B, Kc]; basis_disp: [C, B, Kd] with
    C = hi - lo. Returns (color [C, B, 3], alpha [C, B]); rows are
    independent, so padded fragments just produce unused values.
    """
    dtype = uv.dtype
    csh = packed.color_sh[lo:hi].to(dtype)
    alog = packed.alpha_logits[lo:hi].to(dtype)
    dsh = packed.disp_sh[lo:hi].to(dtype)
    s = csh.shape[1]
    sd = dsh.shape[1]
    disp_coeff = _grid_sample_batched(dsh, uv[..., 0] * sd - 0.5,
                                      uv[..., 1] * sd - 0.5)  # [C, B, 2, Kd]
    disp = (disp_coeff @ basis_disp[..., None])[..., 0].clamp(-DISP_CLAMP, DISP_CLAMP)
    gx = uv[..., 0] * s - 0.5 + disp[..., 0]
    gy = uv[..., 1] * s - 0.5 + disp[..., 1]
    color_coeff = _grid_sample_batched(csh, gx, gy)  # [C, B, 3, Kc]
    color = (color_coeff @ basis_color[..., None])[..., 0]
    alpha = _grid_sample_batched(torch.sigmoid(alog), gx, gy)
    return color, alpha


def resolve_color(tex: PlaneTexture, v: Tensor, active_bands: int | None = None) -> Tensor:
    """View-specific color grid [S, S, 3] for one unit direction v [3]."""
    basis = sh_basis(tex.l_max_color, v.to(tex.color_sh.dtype))
    if active_bands is not None:
        basis = basis * band_mask(tex.l_max_color, active_bands, basis.dtype)
    return tex.color_sh @ basis


def resolve_displacement(tex: PlaneTexture, v: Tensor, active_bands: int | None = None) -> Tensor:
    """View-specific displacement grid [S_d, S_d, 2], clamped to +-DISP_CLAMP texels."""
    basis = sh_basis(tex.l_max_disp, v.to(tex.disp_sh.dtype))
    if active_bands is not None:
        basis = basis * band_mask(tex.l_max_disp, active_bands, basis.dtype)
    return (tex.disp_sh @ basis).clamp(-DISP_CLAMP, DISP_CLAMP)


def bilinear_sample(grid: Tensor, gx: Tensor, gy: Tensor) -> Tensor:
    """Clamp-to-edge bilinear sample of grid [S, S, ...] at continuous coords.

    gx indexes columns, gy rows; texel (i, j) has its center at gx=j, gy=i.
    gx/gy may be any broadcastable shape [...]; returns [..., ...grid trailing].

    Implemented via grid_sample (align_corners=False, border padding), whose
    sampling convention is exactly this one after rescaling to [-1, 1].
    """
    s_rows, s_cols = grid.shape[0], grid.shape[1]
    dtype = torch.promote_types(grid.dtype, gx.dtype)
    gx, gy = torch.broadcast_tensors(gx.to(dtype), gy.to(dtype))
    batch = gx.shape
    trailing = grid.shape[2:]
    chan = grid.to(dtype).reshape(s_rows, s_cols, -1).permute(2, 0, 1)[None]
    nx = (2.0 * gx.reshape(-1) + 1.0) / s_cols - 1.0
    ny = (2.0 * gy.reshape(-1) + 1.0) / s_rows - 1.0
    coords = torch.stack([nx, ny], dim=-1)[None, None]  # [1, 1, M, 2]
    out = torch.nn.functional.grid_sample(
        chan, coords, mode="bilinear", padding_mode="border", align_corners=False)
    return out[0, :, 0, :].T.reshape(batch + trailing)


def upsample_bilinear(grid: Tensor, size: int) -> Tensor:
    """Bilinearly resample grid [s, s, ...] to [size, size, ...] (align centers)."""
    s = grid.shape[0]
    coords = (torch.arange(size, dtype=grid.dtype) + 0.5) / size * s - 0.5
    gy, gx = torch.meshgrid(coords, coords, indexing="ij")
    return bilinear_sample(grid, gx, gy)


def shifted_rgba(tex: PlaneTexture, v: Tensor,
                 active_color_bands: int | None = None,
                 active_disp_bands: int | None = None):
    """Displacement-shifted view-specific (color [S, S, 3], alpha [S, S]).

    The low-res displacement is bilinearly upsampled to S x S, then the
    view-specific color and sigmoid(alpha) are backwarped by bilinear
    sampling at (u + du, v + dv), clamp-to-edge at borders.
    """
    s = tex.size
    color_v = resolve_color(tex, v, active_color_bands)
    alpha = torch.sigmoid(tex.alpha_logits)
    disp_lo = resolve_displacement(tex, v, active_disp_bands)
    disp = upsample_bilinear(disp_lo, s)  # [S, S, 2]
    base = torch.arange(s, dtype=color_v.dtype)
    gy, gx = torch.meshgrid(base, base, indexing="ij")
    sx = gx + disp[..., 0]
    sy = gy + disp[..., 1]
    return bilinear_sample(color_v, sx, sy), bilinear_sample(alpha, sx, sy)


def sample_rgba_at(tex: PlaneTexture, uv: Tensor, basis_color: Tensor, basis_disp: Tensor):
    """Per-fragment displaced RGBA lookup with a per-fragment SH basis.

    uv: [N, 2] in [0,1]^2; basis_color: [N, Kc]; basis_disp: [N, Kd]
    (already band-masked by the caller). Returns (color [N, 3], alpha [N]).

    Equivalent to sampling shifted_rgba at uv but with the view direction
    varying per fragment: SH resolution is linear, so sampling coefficient
    grids first and contracting with the basis afterwards commutes with
    the bilinear filter.
    """
    s = tex.size
    sd = tex.disp_size
    gx_d = uv[..., 0] * sd - 0.5
    gy_d = uv[..., 1] * sd - 0.5
    disp_coeff = bilinear_sample(tex.disp_sh, gx_d, gy_d)  # [N, 2, Kd]
    disp = (disp_coeff @ basis_disp[..., None])[..., 0].clamp(-DISP_CLAMP, DISP_CLAMP)
    gx = uv[..., 0] * s - 0.5 + disp[..., 0]
    gy = uv[..., 1] * s - 0.5 + disp[..., 1]
    color_coeff = bilinear_sample(tex.color_sh, gx, gy)  # [N, 3, Kc]
    color = (color_coeff @ basis_color[..., None])[..., 0]
    # sigmoid in the sampling dtype: an f32 sigmoid later promoted to f64
    # would carry f32 rounding into otherwise f64-exact renders
    alpha = bilinear_sample(torch.sigmoid(tex.alpha_logits.to(gx.dtype)), gx, gy)
    return color, alpha
