"""Scene bundles: posed images, feature maps, sparse points, plot metadata.

On-disk layout of a bundle directory:

    cameras.json       intrinsics + row-major 4x4 world_from_camera per image,
                       plus the similarity transform into the unit cube
    images/*.png       8-bit RGB
    features/*.bin     magic "NFFT", u32 h, w, c, then f32 LE row-major
    sparse_points.txt  one "x y z" per line (scene units)
    plots.json         optional plot endpoints/thresholds/biomass
    depth/*.bin        optional ground-truth depth, NFFT with c=1

Cameras follow OpenCV axes: x right, y down, camera looks along +z.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

FEATURE_MAGIC = b"NFFT"


# -- cameras -------------------------------------------------------------------


@dataclass
class Camera:
    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_from_camera: np.ndarray  # (4,4), row-major semantics

    def __post_init__(self):
        self.world_from_camera = np.asarray(self.world_from_camera, dtype=np.float64)
        if self.world_from_camera.shape != (4, 4):
            raise DataError(f"camera {self.name}: pose must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"camera {self.name}: focal lengths must be positive")
        R = self.rotation
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-4:
            raise DataError(f"camera {self.name}: rotation not orthonormal (tol 1e-4)")
        if np.abs(self.world_from_camera[3] - np.array([0, 0, 0, 1.0])).max() > 1e-9:
            raise DataError(f"camera {self.name}: last pose row must be [0,0,0,1]")

    @property
    def rotation(self):
        return self.world_from_camera[:3, :3]

    @property
    def position(self):
        return self.world_from_camera[:3, 3]

    def to_json(self):
        return {
            "name": self.name, "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "world_from_camera": self.world_from_camera.tolist(),
        }

    @staticmethod
    def from_json(d):
        try:
            return Camera(d["name"], int(d["width"]), int(d["height"]),
                          float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                          np.array(d["world_from_camera"], dtype=np.float64))
        except KeyError as e:
            raise DataError(f"cameras.json: camera entry missing field {e}") from None

    def transformed(self, similarity):
        """Camera pose after applying a similarity transform to the world."""
        s, R_m, t_m = split_similarity(similarity)
        M = self.world_from_camera.copy()
        M[:3, :3] = R_m @ self.rotation
        M[:3, 3] = s * (R_m @ self.position) + t_m
        return Camera(self.name, self.width, self.height,
                      self.fx, self.fy, self.cx, self.cy, M)


def look_at_camera(name, position, target=(0.0, 0.0, 0.0), width=96, height=96,
                   focal=None, up=(0.0, 0.0, 1.0)):
    """Camera at `position` looking at `target`, OpenCV axes, centered pp."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ConfigError("camera position coincides with its target")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    M = np.eye(4)
    M[:3, 0], M[:3, 1], M[:3, 2], M[:3, 3] = right, down, fwd, position
    f = focal if focal is not None else 1.2 * width
    return Camera(name, width, height, f, f, (width - 1) / 2.0, (height - 1) / 2.0, M)


def split_similarity(M):
    """Decompose a 4x4 similarity into (scale, rotation, translation)."""
    M = np.asarray(M, dtype=np.float64)
    A = M[:3, :3]
    s = np.linalg.det(A) ** (1.0 / 3.0)
    if not np.isfinite(s) or s <= 0:
        raise DataError("norm_transform: linear part must have positive determinant")
    R = A / s
    if np.abs(R @ R.T - np.eye(3)).max() > 1e-4:
        raise DataError("norm_transform: not a similarity (non-uniform scale or shear)")
    return s, R, M[:3, 3]


def apply_similarity(M, points):
    points = np.asarray(points, dtype=np.float64)
    return points @ M[:3, :3].T + M[:3, 3]


# -- the bundle ---------------------------------------------------------------


@dataclass
class SceneBundle:
    cameras: list
    images: list                     # (H,W,3) float64 in [0,1], u8-quantized values
    feature_maps: list               # (h,w,c) float32
    sparse_points: np.ndarray        # (k,3)
    norm_transform: np.ndarray       # world -> [-1,1]^3 similarity
    gt_depths: list = None           # optional (H,W) float32 per image
    plots: list = field(default_factory=list)

    def __post_init__(self):
        self.sparse_points = np.asarray(self.sparse_points, dtype=np.float64).reshape(-1, 3)
        self.norm_transform = np.asarray(self.norm_transform, dtype=np.float64)
        if len(self.images) != len(self.cameras):
            raise DataError(f"{len(self.cameras)} cameras but {len(self.images)} images")
        if len(self.feature_maps) != len(self.images):
            raise DataError(f"{len(self.images)} images but {len(self.feature_maps)} feature maps")
        for cam, img in zip(self.cameras, self.images):
            if img.shape[:2] != (cam.height, cam.width):
                raise DataError(f"camera {cam.name}: image is {img.shape[:2]}, "
                                f"expected {(cam.height, cam.width)}")

    @property
    def feature_dim(self):
        return self.feature_maps[0].shape[2] if self.feature_maps else 0

    def normalized(self):
        """The bundle mapped through norm_transform into the unit cube."""
        M = self.norm_transform
        if np.array_equal(M, np.eye(4)):
            return self
        s, _, _ = split_similarity(M)
        depths = None
        if self.gt_depths is not None:
            depths = [d * s for d in self.gt_depths]
        return SceneBundle(
            [c.transformed(M) for c in self.cameras],
            self.images, self.feature_maps,
            apply_similarity(M, self.sparse_points),
            np.eye(4), depths, self.plots)


def save_scene_bundle(bundle, path):
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    (path / "features").mkdir(exist_ok=True)
    meta = {
        "cameras": [c.to_json() for c in bundle.cameras],
        "norm_transform": bundle.norm_transform.tolist(),
    }
    (path / "cameras.json").write_text(json.dumps(meta, indent=1))

    for cam, img in zip(bundle.cameras, bundle.images):
        u8 = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(u8, "RGB").save(path / "images" / f"{cam.name}.png")
    for cam, fmap in zip(bundle.cameras, bundle.feature_maps):
        _write_nfft(path / "features" / f"{cam.name}.bin", fmap)
    if bundle.gt_depths is not None:
        (path / "depth").mkdir(exist_ok=True)
        for cam, d in zip(bundle.cameras, bundle.gt_depths):
            _write_nfft(path / "depth" / f"{cam.name}.bin", d[..., None])

    lines = ["%.17g %.17g %.17g" % (x, y, z) for x, y, z in bundle.sparse_points]
    (path / "sparse_points.txt").write_text("\n".join(lines) + ("\n" if lines else ""))

    if bundle.plots:
        (path / "plots.json").write_text(json.dumps(bundle.plots, indent=1))


def load_scene_bundle(path):
    path = Path(path)
    cam_file = path / "cameras.json"
    if not cam_file.exists():
        raise DataError(f"{cam_file}: missing")
    try:
        meta = json.loads(cam_file.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{cam_file}: malformed JSON ({e})") from None
    if "cameras" not in meta:
        raise DataError(f"{cam_file}: missing field 'cameras'")
    cameras = [Camera.from_json(d) for d in meta["cameras"]]
    norm = np.array(meta.get("norm_transform", np.eye(4).tolist()), dtype=np.float64)
    if norm.shape != (4, 4):
        raise DataError(f"{cam_file}: norm_transform must be 4x4")

    images, fmaps = [], []
    for cam in cameras:
        img_file = path / "images" / f"{cam.name}.png"
        if not img_file.exists():
            raise DataError(f"camera {cam.name}: missing image {img_file}")
        img = np.asarray(Image.open(img_file).convert("RGB"), dtype=np.float64) / 255.0
        images.append(img)
        feat_file = path / "features" / f"{cam.name}.bin"
        if not feat_file.exists():
            raise DataError(f"camera {cam.name}: missing feature map {feat_file}")
        fmaps.append(_read_nfft(feat_file))

    pts_file = path / "sparse_points.txt"
    if not pts_file.exists():
        raise DataError(f"{pts_file}: missing")
    text = pts_file.read_text().strip()
    if text:
        try:
            pts = np.array([[float(t) for t in line.split()] for line in text.splitlines()])
        except ValueError:
            raise DataError(f"{pts_file}: non-numeric entry") from None
        if pts.shape[1] != 3:
            raise DataError(f"{pts_file}: expected 3 columns, got {pts.shape[1]}")
    else:
        pts = np.zeros((0, 3))

    depths = None
    if (path / "depth").exists():
        depths = [_read_nfft(path / "depth" / f"{c.name}.bin")[..., 0] for c in cameras]

    plots = []
    if (path / "plots.json").exists():
        plots = json.loads((path / "plots.json").read_text())

    return SceneBundle(cameras, images, fmaps, pts, norm, depths, plots)


def _write_nfft(file, arr):
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim != 3:
        raise DataError(f"{file}: feature array must be h x w x c")
    h, w, c = arr.shape
    with open(file, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(np.ascontiguousarray(arr).tobytes())


def _read_nfft(file):
    raw = Path(file).read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{file}: bad feature-map magic")
    h, w, c = struct.unpack_from("<III", raw, 4)
    expect = 16 + 4 * h * w * c
    if len(raw) != expect:
        raise DataError(f"{file}: header says {h}x{w}x{c} "
                        f"({expect} bytes) but file has {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)


# -- plot geometry ---------------------------------------------------------------


@dataclass
class PlotSpec:
    endpoints: np.ndarray            # (2,3) row endpoints, scene units (meters)
    along_threshold: float = 1.5
    lateral_threshold: float = 7.5

    def __post_init__(self):
        self.endpoints = np.asarray(self.endpoints, dtype=np.float64).reshape(2, 3)
        if np.linalg.norm(self.endpoints[1] - self.endpoints[0]) < 1e-12:
            raise ConfigError("plot endpoints coincide")
        if self.along_threshold <= 0 or self.lateral_threshold <= 0:
            raise ConfigError("plot thresholds must be positive")

    @property
    def axis(self):
        d = self.endpoints[1] - self.endpoints[0]
        return d / np.linalg.norm(d)

    @property
    def center(self):
        return 0.5 * (self.endpoints[0] + self.endpoints[1])


def extract_plot_views(cameras, plot):
    """Names of cameras whose positions fall inside the plot's selection box.

    A camera at p is selected iff |d . v| <= along_threshold and
    |d x v| <= lateral_threshold, where d = p - center and v is the unit
    row axis; |d x v| is the perpendicular distance to the row line.
    """
    v = plot.axis
    out = []
    for cam in cameras:
        d = cam.position - plot.center
        if abs(d @ v) <= plot.along_threshold and \
                np.linalg.norm(np.cross(d, v)) <= plot.lateral_threshold:
            out.append(cam.name)
    return out


def crop_plot_points(points, plot, half_length, half_width):
    """Points within a box around the plot row: |along| and perp distance."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    v = plot.axis
    d = points - plot.center
    along = d @ v
    perp = np.linalg.norm(np.cross(d, np.broadcast_to(v, d.shape)), axis=1)
    return points[(np.abs(along) <= half_length) & (perp <= half_width)]
