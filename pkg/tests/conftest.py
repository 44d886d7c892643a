"""Shared fixtures: small random scenes, cameras, and deterministic seeding."""

import numpy as np
import pytest
import torch

from planesoup.geometry import CameraIntrinsics, PlaneGeometry, Pose
from planesoup.static_renderer import StaticModel
from planesoup.textures import PlaneTexture, ShBasisDegree


@pytest.fixture(autouse=True)
def _deterministic():
    torch.manual_seed(0)
    np.random.seed(0)


def random_plane(gen: torch.Generator, z_range=(2.0, 6.0),
                 tilt: float = 0.35) -> PlaneGeometry:
    """A finite plane in front of the identity camera, randomly tilted."""
    from planesoup.geometry import axis_angle_to_matrix

    z = float(torch.empty(1, dtype=torch.float64).uniform_(
        *z_range, generator=gen))
    center = torch.tensor([
        float(torch.empty(1).uniform_(-1.0, 1.0, generator=gen)),
        float(torch.empty(1).uniform_(-0.7, 0.7, generator=gen)), z],
        dtype=torch.float64)
    aa = torch.randn(3, generator=gen, dtype=torch.float64) * tilt
    basis = axis_angle_to_matrix(aa)
    w = float(torch.empty(1).uniform_(0.8, 2.5, generator=gen))
    h = float(torch.empty(1).uniform_(0.8, 2.5, generator=gen))
    return PlaneGeometry(basis=basis, center=center, w=w, h=h)


def random_texture(gen: torch.Generator, degrees: ShBasisDegree,
                   size: int = 64, disp_size: int = 16,
                   disp_scale: float = 0.5) -> PlaneTexture:
    tex = PlaneTexture.zeros(degrees, size=size, disp_size=disp_size)
    tex.color_sh.normal_(0.0, 0.3, generator=gen)
    tex.color_sh[..., 0].uniform_(0.0, 1.0, generator=gen)
    tex.alpha_logits.normal_(0.5, 2.0, generator=gen)
    tex.disp_sh.normal_(0.0, disp_scale, generator=gen)
    return tex


def random_model(seed: int = 0, n_planes: int = 16, size: int = 64,
                 degrees: ShBasisDegree | None = None) -> StaticModel:
    gen = torch.Generator().manual_seed(seed)
    degrees = degrees or ShBasisDegree()
    planes = [random_plane(gen) for _ in range(n_planes)]
    textures = [random_texture(gen, degrees, size=size)
                for _ in range(n_planes)]
    return StaticModel(planes, textures, degrees)


def small_intrinsics(width: int = 48, height: int = 32) -> CameraIntrinsics:
    return CameraIntrinsics(fx=width * 0.9, fy=width * 0.9,
                            cx=width / 2, cy=height / 2,
                            width=width, height=height)


def jittered_pose(gen: torch.Generator, scale: float = 0.15) -> Pose:
    from planesoup.geometry import axis_angle_to_matrix

    aa = torch.randn(3, generator=gen, dtype=torch.float64) * scale * 0.3
    tr = torch.randn(3, generator=gen, dtype=torch.float64) * scale
    return Pose(axis_angle_to_matrix(aa), tr)


@pytest.fixture
def cam48():
    return small_intrinsics()


@pytest.fixture
def model16():
    return random_model(seed=3, n_planes=16, size=64)
