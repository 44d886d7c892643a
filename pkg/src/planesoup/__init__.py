"""Hybrid explicit video representation: a global soup of oriented planes
with view-dependent spherical-harmonic textures for static content, plus
per-frame splatted dynamic point layers, with a differentiable renderer,
plane-fitting and per-video optimization, and bit-exact file formats.
"""

from .bundle_io import (Checkpoint, SceneBundle, bench, export_viewer,
                        load_bundle, load_checkpoint, save_bundle,
                        save_checkpoint)
from .dynamic_renderer import DynamicLayer, DynamicLayers, FlowField, SplatConfig
from .geometry import CameraIntrinsics, OrientedPoint, PlaneGeometry, Pose
from .losses import LossWeights, total_loss
from .optimizer import TrainConfig, init_dynamic, init_textures, train
from .pipeline import render_full
from .plane_fitting import (FittingConfig, PointCloud, build_static_cloud,
                            fit_planes, init_planes, scene_scale_of)
from .static_renderer import RenderRequest, StaticModel, render_static
from .textures import PlaneTexture, ShBasisDegree

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "Pose", "PlaneGeometry", "OrientedPoint",
    "PlaneTexture", "ShBasisDegree", "StaticModel", "RenderRequest",
    "render_static", "render_full", "DynamicLayer", "DynamicLayers",
    "FlowField", "SplatConfig", "LossWeights", "total_loss",
    "FittingConfig", "PointCloud", "build_static_cloud", "init_planes",
    "fit_planes", "scene_scale_of", "TrainConfig", "train", "init_textures",
    "init_dynamic", "SceneBundle", "Checkpoint", "save_bundle", "load_bundle",
    "save_checkpoint", "load_checkpoint", "export_viewer", "bench",
]
