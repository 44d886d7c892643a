"""Camera/pose/plane math against scipy and brute-force oracles."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from planesoup.geometry import (CameraIntrinsics, OrientedPoint, PlaneGeometry,
                                Pose, axis_angle_to_matrix, camera_rays,
                                finite_plane_distance, from_plane_coords,
                                intersect_ray_plane, pixel_grid,
                                point_plane_distance, project_point,
                                to_plane_coords, unproject_pixel)
from tests.conftest import jittered_pose, random_plane, small_intrinsics


def test_axis_angle_matches_scipy():
    gen = torch.Generator().manual_seed(1)
    for _ in range(50):
        aa = torch.randn(3, generator=gen, dtype=torch.float64) * 2.0
        r = axis_angle_to_matrix(aa)
        ref = Rotation.from_rotvec(aa.numpy()).as_matrix()
        assert np.abs(r.numpy() - ref).max() < 1e-12


def test_axis_angle_zero_is_identity():
    r = axis_angle_to_matrix(torch.zeros(3, dtype=torch.float64))
    assert torch.allclose(r, torch.eye(3, dtype=torch.float64))


def test_rotation_validation_rejects_non_orthonormal():
    bad = torch.eye(3, dtype=torch.float64)
    bad[0, 0] = 1.5
    with pytest.raises(ValueError):
        Pose(bad, torch.zeros(3, dtype=torch.float64))


def test_pose_inverse_and_compose():
    gen = torch.Generator().manual_seed(2)
    p = jittered_pose(gen, scale=1.0)
    q = jittered_pose(gen, scale=1.0)
    x = torch.randn(10, 3, generator=gen, dtype=torch.float64)
    assert torch.allclose(p.inverse().apply(p.apply(x)), x, atol=1e-12)
    assert torch.allclose(p.compose(q).apply(x), p.apply(q.apply(x)),
                          atol=1e-12)


def test_camera_center_maps_to_origin():
    gen = torch.Generator().manual_seed(3)
    p = jittered_pose(gen, scale=1.0)
    c = p.camera_center
    assert torch.allclose(p.apply(c[None]), torch.zeros(1, 3, dtype=torch.float64),
                          atol=1e-12)


def test_plane_coords_roundtrip():
    gen = torch.Generator().manual_seed(4)
    plane = random_plane(gen)
    x = torch.randn(20, 3, generator=gen, dtype=torch.float64)
    p = to_plane_coords(plane, x)
    assert torch.allclose(from_plane_coords(plane, p), x, atol=1e-12)


def test_point_plane_distance_zero_on_plane():
    gen = torch.Generator().manual_seed(5)
    plane = random_plane(gen)
    uv = torch.empty(15, 2, dtype=torch.float64).uniform_(-0.45, 0.45,
                                                          generator=gen)
    pts = (plane.center + uv[:, :1] * plane.basis[:, 0] * plane.w
           + uv[:, 1:] * plane.basis[:, 1] * plane.h)
    assert point_plane_distance(plane, pts).abs().max() < 1e-9


def test_finite_plane_distance_brute_force():
    # compare against dense sampling of the rectangle
    gen = torch.Generator().manual_seed(6)
    w, h = 1.7, 0.9
    uu, vv = torch.meshgrid(torch.linspace(-w / 2, w / 2, 400, dtype=torch.float64),
                            torch.linspace(-h / 2, h / 2, 400, dtype=torch.float64),
                            indexing="ij")
    rect = torch.stack([uu.reshape(-1), vv.reshape(-1),
                        torch.zeros(uu.numel(), dtype=torch.float64)], dim=-1)
    pts = torch.randn(30, 3, generator=gen, dtype=torch.float64) * 1.5
    got = finite_plane_distance(pts, w, h)
    ref = torch.cdist(pts, rect).min(dim=1).values
    assert (got - ref).abs().max() < 5e-3  # limited by rect sampling density


def test_intersect_ray_plane_against_manual():
    gen = torch.Generator().manual_seed(7)
    plane = random_plane(gen)
    origin = torch.zeros(3, dtype=torch.float64)
    dirs = plane.center[None] + 0.1 * torch.randn(8, 3, generator=gen,
                                                  dtype=torch.float64)
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    t, uv, hit = intersect_ray_plane(plane, origin, dirs)
    pts = origin + t[:, None] * dirs
    # hit points lie on the infinite plane
    assert point_plane_distance(plane, pts[hit]).abs().max() < 1e-10
    # and uv matches the in-plane coordinates
    local = to_plane_coords(plane, pts)
    assert (local[hit, 0] / plane.w + 0.5 - uv[hit, 0]).abs().max() < 1e-10
    assert (local[hit, 1] / plane.h + 0.5 - uv[hit, 1]).abs().max() < 1e-10


def test_project_unproject_roundtrip():
    gen = torch.Generator().manual_seed(8)
    k = small_intrinsics()
    pose = jittered_pose(gen)
    pix = torch.rand(25, 2, generator=gen, dtype=torch.float64) \
        * torch.tensor([k.width, k.height], dtype=torch.float64)
    depth = torch.empty(25, dtype=torch.float64).uniform_(1.0, 9.0, generator=gen)
    x = unproject_pixel(k, pose, pix, depth)
    pix2, z = project_point(k, pose, x)
    assert (pix2 - pix).abs().max() < 1e-9
    assert (z - depth).abs().max() < 1e-9


def test_pixel_grid_centers():
    k = CameraIntrinsics(fx=10, fy=10, cx=2, cy=1.5, width=4, height=3)
    g = pixel_grid(k)
    assert g.shape == (3, 4, 2)
    assert float(g[0, 0, 0]) == 0.5 and float(g[0, 0, 1]) == 0.5
    assert float(g[2, 3, 0]) == 3.5 and float(g[2, 3, 1]) == 2.5


def test_camera_rays_hit_pixel_centers():
    gen = torch.Generator().manual_seed(9)
    k = small_intrinsics()
    pose = jittered_pose(gen)
    origin, dirs = camera_rays(k, pose)
    pts = origin + 3.7 * dirs.reshape(-1, 3)
    pix, z = project_point(k, pose, pts)
    ref = pixel_grid(k).reshape(-1, 2)
    assert (pix - ref).abs().max() < 1e-9
    assert (z > 0).all()


def test_intrinsics_scaled():
    k = small_intrinsics()
    k2 = k.scaled(2.0)
    assert (k2.width, k2.height) == (2 * k.width, 2 * k.height)
    assert k2.fx == 2 * k.fx and k2.cy == 2 * k.cy


def test_oriented_point_normal_must_be_unit():
    with pytest.raises(ValueError):
        OrientedPoint(position=torch.zeros(3, dtype=torch.float64),
                      normal=torch.tensor([0.0, 0.0, 2.0], dtype=torch.float64),
                      color=torch.zeros(3, dtype=torch.float64))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_axis_angle_always_rotation(seed):
    gen = torch.Generator().manual_seed(seed)
    aa = torch.randn(3, generator=gen, dtype=torch.float64) * 3.0
    r = axis_angle_to_matrix(aa)
    eye = r.T @ r
    assert (eye - torch.eye(3, dtype=torch.float64)).abs().max() < 1e-12
    assert abs(float(torch.linalg.det(r)) - 1.0) < 1e-12
