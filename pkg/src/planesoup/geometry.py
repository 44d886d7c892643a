"""Cameras, rigid poses, oriented finite planes, and projection math.

Conventions (also documented in the bundle format docs):
  - right-handed camera frame, +z forward
  - pixel origin at the top-left corner, pixel (row i, col j) has its center
    at continuous coordinate (j + 0.5, i + 0.5)
  - Pose maps world -> camera: x_cam = R @ x_world + t
  - plane basis columns are (u-axis, v-axis, normal), normal = u x v
  - texture uv has its origin at the (-w/2, -h/2) plane corner

All types are immutable value types; all operations are pure and accept
batched tensors with trailing dimension 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

ORTHO_TOL = 1e-6
RAY_PARALLEL_EPS = 1e-9


def _as_tensor(x, dtype=torch.float64) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return torch.as_tensor(x, dtype=dtype)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor,
            self.cx * factor, self.cy * factor,
            int(round(self.width * factor)), int(round(self.height * factor)),
        )


def check_rotation(r: Tensor, tol: float = ORTHO_TOL) -> None:
    eye = torch.eye(3, dtype=r.dtype)
    err = (r.T @ r - eye).abs().max().item()
    if err > tol:
        raise ValueError(f"rotation not orthonormal (max |R^T R - I| = {err:.3g})")
    if torch.det(r).item() < 0:
        raise ValueError("rotation has determinant -1")


@dataclass(frozen=True)
class Pose:
    """Rigid world->camera transform: x_cam = rotation @ x_world + translation."""

    rotation: Tensor  # [3, 3]
    translation: Tensor  # [3]

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_tensor(self.rotation))
        object.__setattr__(self, "translation", _as_tensor(self.translation))
        check_rotation(self.rotation)

    @staticmethod
    def identity(dtype=torch.float64) -> "Pose":
        return Pose(torch.eye(3, dtype=dtype), torch.zeros(3, dtype=dtype))

    def apply(self, x: Tensor) -> Tensor:
        """World points [..., 3] -> camera frame."""
        return x @ self.rotation.to(x.dtype).T + self.translation.to(x.dtype)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other)).apply(x) == self.apply(other.apply(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    @property
    def camera_center(self) -> Tensor:
        """Camera origin in world coordinates."""
        return -(self.rotation.T @ self.translation)

    def matrix3x4(self) -> Tensor:
        return torch.cat([self.rotation, self.translation[:, None]], dim=1)


@dataclass(frozen=True)
class PlaneGeometry:
    """Oriented finite rectangle: basis columns (u, v, n), center, extents w x h."""

    basis: Tensor  # [3, 3]
    center: Tensor  # [3]
    w: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "basis", _as_tensor(self.basis))
        object.__setattr__(self, "center", _as_tensor(self.center))
        check_rotation(self.basis)
        if float(self.w) <= 0 or float(self.h) <= 0:
            raise ValueError("plane extents must be positive")

    @property
    def normal(self) -> Tensor:
        return self.basis[:, 2]

    def corners(self) -> Tensor:
        """The 4 rectangle corners, [4, 3], in uv order (0,0),(1,0),(0,1),(1,1)."""
        u, v = self.basis[:, 0], self.basis[:, 1]
        hw, hh = float(self.w) / 2, float(self.h) / 2
        c = self.center
        return torch.stack([
            c - hw * u - hh * v,
            c + hw * u - hh * v,
            c - hw * u + hh * v,
            c + hw * u + hh * v,
        ])


@dataclass(frozen=True)
class OrientedPoint:
    """A world-space point with a unit normal and an RGB color."""

    position: Tensor  # [3]
    normal: Tensor  # [3]
    color: Tensor  # [3]

    def __post_init__(self):
        n = _as_tensor(self.normal)
        if abs(float(torch.linalg.norm(n)) - 1.0) > 1e-6:
            raise ValueError("normal must be unit length")


def axis_angle_to_matrix(rotvec: Tensor) -> Tensor:
    """Rodrigues' formula, batched: [..., 3] -> [..., 3, 3]. Exact at zero."""
    theta = torch.linalg.norm(rotvec, dim=-1, keepdim=True).clamp_min(1e-20)
    axis = rotvec / theta
    theta = theta[..., None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack([
        torch.stack([zero, -z, y], dim=-1),
        torch.stack([z, zero, -x], dim=-1),
        torch.stack([-y, x, zero], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=rotvec.dtype).expand(k.shape)
    return eye + torch.sin(theta) * k + (1 - torch.cos(theta)) * (k @ k)


def to_plane_coords(plane: PlaneGeometry, x: Tensor) -> Tensor:
    """World points [..., 3] -> plane basis coordinates (x_p, y_p, z_p)."""
    b = plane.basis.to(x.dtype)
    return (x - plane.center.to(x.dtype)) @ b


def from_plane_coords(plane: PlaneGeometry, p: Tensor) -> Tensor:
    """Inverse of to_plane_coords."""
    b = plane.basis.to(p.dtype)
    return p @ b.T + plane.center.to(p.dtype)


def point_plane_distance(plane: PlaneGeometry, x: Tensor) -> Tensor:
    """Distance from world points [..., 3] to the finite rectangle."""
    p = to_plane_coords(plane, x)
    return finite_plane_distance(p, float(plane.w), float(plane.h))


def finite_plane_distance(p: Tensor, w, h) -> Tensor:
    """Distance given plane-frame coords [..., 3] and extents (tensors or floats)."""
    du = (p[..., 0].abs() - w / 2).clamp_min(0.0)
    dv = (p[..., 1].abs() - h / 2).clamp_min(0.0)
    # the tiny floor keeps sqrt off exact zero, where its gradient is infinite
    return torch.sqrt((du * du + dv * dv + p[..., 2] * p[..., 2]).clamp_min(1e-24))


def intersect_ray_plane(plane: PlaneGeometry, origin: Tensor, dir: Tensor):
    """First hit of ray(s) against the finite rectangle.

    origin, dir: [..., 3], dir unit length. Returns (t, uv, hit) where
    t: [...], uv: [..., 2] in [0,1]^2 where hit, hit: bool [...]. Misses
    (parallel, behind the origin, outside the rectangle) have hit=False.
    """
    n = plane.normal.to(dir.dtype)
    c = plane.center.to(dir.dtype)
    denom = dir @ n
    ok = denom.abs() >= RAY_PARALLEL_EPS
    t = ((c - origin) @ n) / torch.where(ok, denom, torch.ones_like(denom))
    ok = ok & (t > 0)
    hit_point = origin + t[..., None] * dir
    p = to_plane_coords(plane, hit_point)
    u = p[..., 0] / float(plane.w) + 0.5
    v = p[..., 1] / float(plane.h) + 0.5
    ok = ok & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    return t, torch.stack([u, v], dim=-1), ok


def project_point(K: CameraIntrinsics, pose: Pose, x: Tensor):
    """World points [..., 3] -> (pixel [..., 2], depth [...]).

    Behind-camera points are reported via depth <= 0; the pixel value is
    computed with the depth magnitude guarded so no NaN is produced.
    """
    xc = pose.apply(x)
    z = xc[..., 2]
    safe_z = torch.where(z.abs() < 1e-20, torch.full_like(z, 1e-20), z)
    px = K.fx * xc[..., 0] / safe_z + K.cx
    py = K.fy * xc[..., 1] / safe_z + K.cy
    return torch.stack([px, py], dim=-1), z


def unproject_pixel(K: CameraIntrinsics, pose: Pose, pixel: Tensor, depth: Tensor) -> Tensor:
    """Pixels [..., 2] + depths [...] -> world points [..., 3]. Requires depth > 0."""
    if bool((torch.as_tensor(depth) <= 0).any()):
        raise ValueError("unproject_pixel requires depth > 0")
    depth = torch.as_tensor(depth, dtype=pixel.dtype)
    x = (pixel[..., 0] - K.cx) / K.fx * depth
    y = (pixel[..., 1] - K.cy) / K.fy * depth
    cam = torch.stack([x, y, depth.expand(x.shape)], dim=-1)
    return pose.inverse().apply(cam)


def pixel_grid(K: CameraIntrinsics, dtype=torch.float64) -> Tensor:
    """Pixel-center coordinates for every pixel, [H, W, 2] as (x, y)."""
    ys = torch.arange(K.height, dtype=dtype) + 0.5
    xs = torch.arange(K.width, dtype=dtype) + 0.5
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def camera_rays(K: CameraIntrinsics, pose: Pose, dtype=torch.float64):
    """(origin [3], unit directions [H, W, 3]) of every pixel-center ray, world frame."""
    pix = pixel_grid(K, dtype)
    x = (pix[..., 0] - K.cx) / K.fx
    y = (pix[..., 1] - K.cy) / K.fy
    d_cam = torch.stack([x, y, torch.ones_like(x)], dim=-1)
    r = pose.rotation.to(dtype)
    d_world = d_cam @ r  # R^T applied to rows
    d_world = d_world / torch.linalg.norm(d_world, dim=-1, keepdim=True)
    return pose.camera_center.to(dtype), d_world
