"""Bit-exact file formats: input bundles, trained checkpoints, viewer export,
and the benchmark harness.

All binary formats are little-endian with a 4-byte magic. Raster files carry
a 16-byte header (magic, width u32, height u32, reserved u32) followed by
f32 data; `PSDP` is a 1-channel depth raster, `PSFL` a 2-channel interleaved
flow raster. Checkpoints (`PSCK`) are a JSON header plus raw tensor payloads,
written deterministically so save -> load -> save is byte-identical.

Manifest poses are 3x4 row-major world->camera matrices; depth is metric.
Flow convention: F_{t->t+j}(x) is the pixel displacement such that x + F
lands on the corresponding point in frame t+j.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .dynamic_renderer import DynamicLayers
from .geometry import CameraIntrinsics, PlaneGeometry, Pose
from .textures import PlaneTexture, ShBasisDegree

DEPTH_MAGIC = b"PSDP"
FLOW_MAGIC = b"PSFL"
CHECKPOINT_MAGIC = b"PSCK"
CHECKPOINT_VERSION = 1
VIEWER_VERSION = 1
POSE_ORTHO_TOL = 1e-4


class BundleError(Exception):
    """Base class for bundle validation failures."""


class MissingFileError(BundleError):
    pass


class ResolutionMismatchError(BundleError):
    pass


class BadMagicError(BundleError):
    pass


class BadPoseError(BundleError):
    pass


@dataclass
class SceneBundle:
    """Input video package: frames, depths, poses, intrinsics, masks, flows."""

    intrinsics: CameraIntrinsics
    poses: list[Pose]  # world -> camera, per frame
    frames: Tensor  # [N, H, W, 3] float32 in [0, 1]
    depths: Tensor  # [N, H, W] float32, metric
    masks: Tensor  # [N, H, W] bool, True = dynamic
    flows: dict = field(default_factory=dict)  # (t, j) -> [H, W, 2] float32

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def validate(self) -> None:
        n, h, w = self.frames.shape[:3]
        if (h, w) != (self.intrinsics.height, self.intrinsics.width):
            raise ResolutionMismatchError("frames do not match intrinsics resolution")
        for name, t, shape in (("depths", self.depths, (n, h, w)),
                               ("masks", self.masks, (n, h, w))):
            if tuple(t.shape) != shape:
                raise ResolutionMismatchError(f"{name} shape {tuple(t.shape)} != {shape}")
        if len(self.poses) != n:
            raise ResolutionMismatchError("pose count != frame count")
        for (t, j), f in self.flows.items():
            if tuple(f.shape) != (h, w, 2):
                raise ResolutionMismatchError(f"flow ({t},{j}) has wrong shape")


def write_raster(path: Path, magic: bytes, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    h, w = data.shape[0], data.shape[1]
    with open(path, "wb") as f:
        f.write(magic + struct.pack("<III", w, h, 0))
        f.write(data.tobytes())


def read_raster(path: Path, magic: bytes, channels: int = 1) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"missing raster file: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != magic:
        raise BadMagicError(f"bad magic in {path}")
    w, h, _ = struct.unpack("<III", raw[4:16])
    expected = 16 + w * h * channels * 4
    if len(raw) != expected:
        raise BadMagicError(f"short read in {path}: {len(raw)} != {expected}")
    arr = np.frombuffer(raw, dtype="<f4", offset=16)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def _check_pose_matrix(m: np.ndarray, where: str) -> Pose:
    r = m[:, :3]
    if np.linalg.det(r) < 0:
        raise BadPoseError(f"pose has determinant -1: {where}")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > POSE_ORTHO_TOL:
        raise BadPoseError(f"pose not orthonormal (err {err:.2g}): {where}")
    if err > 1e-9:
        # re-orthonormalize via SVD, warn through the return path
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
    return Pose(torch.from_numpy(np.ascontiguousarray(r)),
                torch.from_numpy(np.ascontiguousarray(m[:, 3])))


def save_bundle(bundle: SceneBundle, path: str | Path) -> None:
    path = Path(path)
    for sub in ("frames", "depths", "masks", "flows"):
        (path / sub).mkdir(parents=True, exist_ok=True)
    n = bundle.n_frames
    K = bundle.intrinsics
    manifest = {
        "version": 1,
        "n_frames": n,
        "width": K.width,
        "height": K.height,
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy},
        "poses": [[round(float(x), 17) for x in p.matrix3x4().reshape(-1)]
                  for p in bundle.poses],
        "frames": [f"frames/frame_{t:04d}.png" for t in range(n)],
        "depths": [f"depths/depth_{t:04d}.psdp" for t in range(n)],
        "masks": [f"masks/mask_{t:04d}.png" for t in range(n)],
        "flows": {f"{t},{j}": f"flows/flow_{t:04d}_{j:+d}.psfl"
                  for (t, j) in sorted(bundle.flows)},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    for t in range(n):
        img = (bundle.frames[t].clamp(0, 1).numpy() * 255).round().astype(np.uint8)
        Image.fromarray(img).save(path / f"frames/frame_{t:04d}.png")
        write_raster(path / f"depths/depth_{t:04d}.psdp", DEPTH_MAGIC,
                     bundle.depths[t].numpy())
        mask = (bundle.masks[t].numpy().astype(np.uint8)) * 255
        Image.fromarray(mask, mode="L").save(path / f"masks/mask_{t:04d}.png")
    for (t, j), flow in bundle.flows.items():
        write_raster(path / f"flows/flow_{t:04d}_{j:+d}.psfl", FLOW_MAGIC,
                     flow.numpy())


def load_bundle(path: str | Path) -> SceneBundle:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise MissingFileError(f"missing manifest: {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("version") != 1:
        raise BundleError(f"unsupported bundle version {manifest.get('version')}")
    w, h, n = manifest["width"], manifest["height"], manifest["n_frames"]
    intr = manifest["intrinsics"]
    K = CameraIntrinsics(intr["fx"], intr["fy"], intr["cx"], intr["cy"], w, h)
    poses = [_check_pose_matrix(np.array(p, dtype=np.float64).reshape(3, 4), f"frame {t}")
             for t, p in enumerate(manifest["poses"])]

    frames, depths, masks = [], [], []
    for t in range(n):
        fp = path / manifest["frames"][t]
        if not fp.exists():
            raise MissingFileError(f"missing frame: {fp}")
        img = np.asarray(Image.open(fp).convert("RGB"), dtype=np.float32) / 255.0
        if img.shape[:2] != (h, w):
            raise ResolutionMismatchError(f"frame {t} resolution mismatch")
        frames.append(img)
        depths.append(read_raster(path / manifest["depths"][t], DEPTH_MAGIC))
        mp = path / manifest["masks"][t]
        if not mp.exists():
            raise MissingFileError(f"missing mask: {mp}")
        mask = np.asarray(Image.open(mp).convert("L"))
        if mask.shape != (h, w):
            raise ResolutionMismatchError(f"mask {t} resolution mismatch")
        masks.append(mask >= 128)
    flows = {}
    for key, rel in manifest.get("flows", {}).items():
        t, j = (int(x) for x in key.split(","))
        flows[(t, j)] = torch.from_numpy(
            read_raster(path / rel, FLOW_MAGIC, channels=2).copy())
    bundle = SceneBundle(
        intrinsics=K, poses=poses,
        frames=torch.from_numpy(np.stack(frames)),
        depths=torch.from_numpy(np.stack(depths).copy()),
        masks=torch.from_numpy(np.stack(masks)),
        flows=flows,
    )
    bundle.validate()
    return bundle


# --- checkpoint container -------------------------------------------------

def _pack_tensors(tensors: dict[str, np.ndarray], header_extra: dict) -> bytes:
    index = {}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"))
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape),
                       "offset": offset, "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = dict(header_extra)
    header["tensors"] = index
    hjson = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<IQ", CHECKPOINT_VERSION, len(hjson))
    out += hjson
    out += b"".join(blobs)
    return bytes(out)


def _unpack_tensors(raw: bytes):
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError("bad checkpoint magic")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise BundleError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode())
    base = 16 + hlen
    tensors = {}
    for name, meta in header["tensors"].items():
        arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"]),
                            count=int(np.prod(meta["shape"])) if meta["shape"] else 1,
                            offset=base + meta["offset"])
        tensors[name] = arr.reshape(meta["shape"]).copy()
    return header, tensors


@dataclass
class Checkpoint:
    planes: list[PlaneGeometry]
    textures: list[PlaneTexture]
    sh_degrees: ShBasisDegree
    dynamic: DynamicLayers | None
    config: dict
    metadata: dict

    def static_model(self):
        from .static_renderer import StaticModel

        return StaticModel(self.planes, self.textures, self.sh_degrees)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    tensors: dict[str, np.ndarray] = {}
    n = len(ckpt.planes)
    if n:
        tensors["plane_basis"] = np.stack([p.basis.numpy() for p in ckpt.planes])
        tensors["plane_center"] = np.stack([p.center.numpy() for p in ckpt.planes])
        tensors["plane_wh"] = np.array([[float(p.w), float(p.h)] for p in ckpt.planes])
        tensors["tex_color_sh"] = np.stack([t.color_sh.detach().numpy().astype(np.float32)
                                            for t in ckpt.textures])
        tensors["tex_alpha"] = np.stack([t.alpha_logits.detach().numpy().astype(np.float32)
                                         for t in ckpt.textures])
        tensors["tex_disp_sh"] = np.stack([t.disp_sh.detach().numpy().astype(np.float32)
                                           for t in ckpt.textures])
    if ckpt.dynamic is not None:
        tensors["dyn_rgb"] = ckpt.dynamic.rgb.detach().numpy().astype(np.float32)
        tensors["dyn_mask_logits"] = ckpt.dynamic.mask_logits.detach().numpy().astype(np.float32)
        tensors["dyn_depth"] = ckpt.dynamic.depth.detach().numpy().astype(np.float32)
    header = {
        "n_planes": n,
        "sh_degrees": [ckpt.sh_degrees.l_max_color, ckpt.sh_degrees.l_max_disp],
        "config": ckpt.config,
        "metadata": ckpt.metadata,
    }
    Path(path).write_bytes(_pack_tensors(tensors, header))


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"missing checkpoint: {p}")
    header, tensors = _unpack_tensors(p.read_bytes())
    degrees = ShBasisDegree(*header["sh_degrees"])
    planes, textures = [], []
    for i in range(header["n_planes"]):
        planes.append(PlaneGeometry(
            basis=torch.from_numpy(tensors["plane_basis"][i]),
            center=torch.from_numpy(tensors["plane_center"][i]),
            w=float(tensors["plane_wh"][i, 0]), h=float(tensors["plane_wh"][i, 1])))
        textures.append(PlaneTexture(
            color_sh=torch.from_numpy(tensors["tex_color_sh"][i]),
            alpha_logits=torch.from_numpy(tensors["tex_alpha"][i]),
            disp_sh=torch.from_numpy(tensors["tex_disp_sh"][i])))
    dynamic = None
    if "dyn_rgb" in tensors:
        dynamic = DynamicLayers(
            rgb=torch.from_numpy(tensors["dyn_rgb"]),
            mask_logits=torch.from_numpy(tensors["dyn_mask_logits"]),
            depth=torch.from_numpy(tensors["dyn_depth"]))
    return Checkpoint(planes, textures, degrees, dynamic,
                      header["config"], header["metadata"])


# --- viewer export --------------------------------------------------------

VIEWER_FIDELITY_LIMIT = 2.0 / 255.0


def _quantize_textures(ckpt: Checkpoint):
    color = np.stack([t.color_sh.detach().numpy() for t in ckpt.textures]).astype(np.float16)
    alpha_sig = np.stack([torch.sigmoid(t.alpha_logits).numpy() for t in ckpt.textures])
    alpha_u8 = np.clip(np.round(alpha_sig * 255), 0, 255).astype(np.uint8)
    disp = np.stack([t.disp_sh.detach().numpy() for t in ckpt.textures]).astype(np.float16)
    return color, alpha_u8, disp


def dequantized_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    """The checkpoint as the viewer will see it after quantization."""
    color, alpha_u8, disp = _quantize_textures(ckpt)
    textures = []
    for i in range(len(ckpt.textures)):
        alpha = np.clip(alpha_u8[i].astype(np.float32) / 255.0, 1e-5, 1 - 1e-5)
        logits = np.log(alpha / (1 - alpha))
        textures.append(PlaneTexture(
            color_sh=torch.from_numpy(color[i].astype(np.float32)),
            alpha_logits=torch.from_numpy(logits),
            disp_sh=torch.from_numpy(disp[i].astype(np.float32))))
    return Checkpoint(ckpt.planes, textures, ckpt.sh_degrees, ckpt.dynamic,
                      ckpt.config, ckpt.metadata)


def _dynamic_point_buffers(ckpt: Checkpoint, K: CameraIntrinsics,
                           poses: list[Pose], mask_threshold: float = 0.02):
    """Per-frame packed point records: position f32x3, color u8x3, mask u8."""
    from .geometry import pixel_grid, unproject_pixel

    buffers = []
    if ckpt.dynamic is None:
        return buffers
    for t in range(len(ckpt.dynamic)):
        layer = ckpt.dynamic.layer(t)
        m = layer.mask
        sel = m > mask_threshold
        idx = sel.nonzero(as_tuple=False)
        if idx.shape[0] == 0:
            buffers.append(b"")
            continue
        pix = (idx[:, [1, 0]].to(torch.float64) + 0.5)
        depth = layer.depth[sel].to(torch.float64)
        pts = unproject_pixel(K, poses[t], pix, depth).to(torch.float32).numpy()
        rgb = np.clip(np.round(layer.rgb[sel].detach().numpy() * 255), 0, 255).astype(np.uint8)
        mask_u8 = np.clip(np.round(m[sel].detach().numpy() * 255), 0, 255).astype(np.uint8)
        rec = np.zeros(idx.shape[0], dtype=[("pos", "<f4", 3), ("rgb", "u1", 3), ("m", "u1")])
        rec["pos"] = pts
        rec["rgb"] = rgb
        rec["m"] = mask_u8
        buffers.append(rec.tobytes())
    return buffers


def export_viewer(ckpt: Checkpoint, path: str | Path,
                  intrinsics: CameraIntrinsics | None = None,
                  poses: list[Pose] | None = None,
                  probe_views: int = 8) -> dict:
    """Quantize and pack a checkpoint for the browser viewer.

    Returns the fidelity report (mean abs render error per probe view) and
    raises if any view exceeds the documented 2/255 bound.
    """
    from .static_renderer import RenderRequest, StaticModel, render_static

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    color, alpha_u8, disp = _quantize_textures(ckpt)
    plane_table = np.zeros((len(ckpt.planes), 14), dtype="<f4")
    for i, p in enumerate(ckpt.planes):
        plane_table[i, :9] = p.basis.numpy().reshape(-1)
        plane_table[i, 9:12] = p.center.numpy()
        plane_table[i, 12] = float(p.w)
        plane_table[i, 13] = float(p.h)
    (path / "planes.bin").write_bytes(plane_table.tobytes())
    (path / "color_sh.bin").write_bytes(color.astype("<f2").tobytes())
    (path / "alpha.bin").write_bytes(alpha_u8.tobytes())
    (path / "disp_sh.bin").write_bytes(disp.astype("<f2").tobytes())

    if intrinsics is None:
        meta_k = ckpt.metadata.get("intrinsics")
        if meta_k:
            intrinsics = CameraIntrinsics(**meta_k)
    if poses is None and "poses" in ckpt.metadata:
        poses = [_check_pose_matrix(np.array(p).reshape(3, 4), "metadata")
                 for p in ckpt.metadata["poses"]]

    dyn_frames = []
    frame_index = []
    offset = 0
    if ckpt.dynamic is not None and intrinsics is not None and poses:
        dyn_frames = _dynamic_point_buffers(ckpt, intrinsics, poses)
        with open(path / "dynamic.bin", "wb") as f:
            for buf in dyn_frames:
                frame_index.append({"offset": offset, "count": len(buf) // 16})
                f.write(buf)
                offset += len(buf)

    # fidelity probe: core render vs dequantized render
    report = {"views": []}
    if intrinsics is not None and poses:
        deq = dequantized_checkpoint(ckpt)
        model = StaticModel(ckpt.planes, ckpt.textures, ckpt.sh_degrees)
        model_q = StaticModel(deq.planes, deq.textures, deq.sh_degrees)
        step = max(1, len(poses) // probe_views)
        for pose in poses[::step][:probe_views]:
            req = RenderRequest(intrinsics, pose)
            a = render_static(model, req).color.clamp(0, 1)
            b = render_static(model_q, req).color.clamp(0, 1)
            report["views"].append(float((a - b).abs().mean()))
        report["max_mean_abs"] = max(report["views"], default=0.0)
        if report["views"] and report["max_mean_abs"] > VIEWER_FIDELITY_LIMIT:
            raise BundleError(
                f"viewer export fidelity {report['max_mean_abs']:.5f} exceeds "
                f"{VIEWER_FIDELITY_LIMIT:.5f}")

    s = ckpt.textures[0].size if ckpt.textures else 0
    sd = ckpt.textures[0].disp_size if ckpt.textures else 0
    manifest = {
        "version": VIEWER_VERSION,
        "n_planes": len(ckpt.planes),
        "texture_size": s,
        "disp_size": sd,
        "sh_degrees": [ckpt.sh_degrees.l_max_color, ckpt.sh_degrees.l_max_disp],
        "static_only": ckpt.dynamic is None or not dyn_frames,
        "n_frames": len(dyn_frames),
        "dynamic_index": frame_index,
        "buffers": {
            "planes": "planes.bin", "color_sh": "color_sh.bin",
            "alpha": "alpha.bin", "disp_sh": "disp_sh.bin",
            **({"dynamic": "dynamic.bin"} if dyn_frames else {}),
        },
        "intrinsics": ({"fx": intrinsics.fx, "fy": intrinsics.fy,
                        "cx": intrinsics.cx, "cy": intrinsics.cy,
                        "width": intrinsics.width, "height": intrinsics.height}
                       if intrinsics else None),
        "camera_path": ([[float(x) for x in p.matrix3x4().reshape(-1)] for p in poses]
                        if poses else []),
        "fidelity": report,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return report


# --- benchmark harness ----------------------------------------------------

def bench(model, dynamic: DynamicLayers | None, intrinsics: CameraIntrinsics,
          poses: list[Pose], n_frames: int = 100, flows: dict | None = None) -> dict:
    """Per-stage wall times over >= n_frames renders; median and p95 per stage."""
    from .dynamic_renderer import SplatConfig
    from .pipeline import render_full
    from .static_renderer import pack_model

    stage_names = ("texture_resolve", "rasterize", "sort", "composite",
                   "blend", "splat", "compose")
    cfg = SplatConfig(neighbor_offsets=(-1, 1))  # playback neighbor set
    n_dyn = len(dynamic) if dynamic is not None else 0
    samples: dict[str, list[float]] = {s: [] for s in stage_names}
    totals = []
    with torch.no_grad():
        model = pack_model(model, atlas=True)
        for i in range(n_frames):
            pose = poses[i % len(poses)]
            timings: dict[str, float] = {}
            t0 = time.perf_counter()
            render_full(model, dynamic, flows or {}, poses, intrinsics,
                        i % n_dyn if n_dyn else 0, pose, intrinsics,
                        cfg, timings=timings, validate=(i == 0))
            totals.append(time.perf_counter() - t0)
            for s in stage_names:
                samples[s].append(timings.get(s, 0.0))
    report = {"n_frames": n_frames,
              "resolution": [intrinsics.width, intrinsics.height],
              "n_planes": len(model.planes),
              "stages": {}}
    for s in stage_names:
        arr = np.array(samples[s])
        report["stages"][s] = {"median_ms": float(np.median(arr) * 1e3),
                               "p95_ms": float(np.percentile(arr, 95) * 1e3)}
    tot = np.array(totals)
    report["total"] = {"median_ms": float(np.median(tot) * 1e3),
                       "p95_ms": float(np.percentile(tot, 95) * 1e3),
                       "fps_median": float(1.0 / np.median(tot))}
    return report
