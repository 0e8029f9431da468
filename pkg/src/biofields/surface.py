"""Surface point clouds: extraction from a trained field, voxelization into
sparse grids, rigid augmentation, and ASCII PLY interchange."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .sparse3d import SparseVoxelGrid


@dataclass
class SurfacePointCloud:
    points: np.ndarray    # (n,3)
    features: np.ndarray  # (n,c)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.points.shape[0]:
            raise ShapeError(f"{self.points.shape[0]} points but feature array "
                             f"has shape {self.features.shape}")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]


def extract_surface_features(fields, grid_res: int = 128, tau=None, chunk: int = 65536):
    """Lattice points of [-1,1]^3 within ``tau`` of the zero level set,
    each carrying the semantic feature evaluated there.

    ``tau`` defaults to half the lattice spacing, which keeps a one-cell
    shell around the surface.
    """
    if grid_res < 2:
        raise ConfigError("grid_res must be at least 2")
    spacing = 2.0 / (grid_res - 1)
    if tau is None:
        tau = 0.5 * spacing
    axis = np.linspace(-1.0, 1.0, grid_res)
    kept_pts = []
    kept_gfeat = []
    # chunk the res^3 lattice one xy-slab batch at a time to bound memory
    plane = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    rows_per_batch = max(1, chunk // grid_res)
    for start in range(0, plane.shape[0], rows_per_batch):
        block = plane[start:start + rows_per_batch]
        pts = np.concatenate(
            [np.repeat(block, grid_res, axis=0),
             np.tile(axis, block.shape[0])[:, None]], axis=1)
        sdf, g = fields.eval_geometry(pts)
        mask = np.abs(sdf[:, 0]) < tau
        if mask.any():
            kept_pts.append(pts[mask])
            kept_gfeat.append(g[mask])
    if not kept_pts:
        raise DataError(
            f"no lattice points within {tau:.4g} of the surface; "
            "increase tau or check that the geometry field has trained")
    points = np.concatenate(kept_pts, axis=0)
    feats = fields.eval_feature(np.concatenate(kept_gfeat, axis=0))
    return SurfacePointCloud(points, feats)


def voxelize(cloud: SurfacePointCloud, dims=(64, 64, 16), lo=None, hi=None,
             include_offsets: bool = True, return_counts: bool = False):
    """Bin points into a sparse grid; each active voxel stores the mean of
    (offset-from-voxel-center, feature) over its points.

    Offsets are in voxel units, so they lie in [-0.5, 0.5). Boundary points
    go to the voxel whose index is the floor of the normalized coordinate;
    the upper domain face folds into the last voxel.
    """
    dims = tuple(int(d) for d in dims)
    lo = np.full(3, -1.0) if lo is None else np.asarray(lo, dtype=np.float64)
    hi = np.full(3, 1.0) if hi is None else np.asarray(hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ConfigError("voxel bounds must satisfy lo < hi per axis")
    if cloud.n == 0:
        raise DataError("cannot voxelize an empty point cloud")
    u = (cloud.points - lo) / (hi - lo) * np.array(dims)
    if np.any(u < 0) or np.any(u > np.array(dims)):
        raise DataError("points outside the voxelization bounds")
    idx = np.minimum(np.floor(u).astype(np.int64), np.array(dims) - 1)
    if include_offsets:
        per_point = np.concatenate([u - (idx + 0.5), cloud.features], axis=1)
    else:
        per_point = cloud.features
    key = np.ravel_multi_index(idx.T, dims)
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    sums = np.zeros((uniq.size, per_point.shape[1]))
    np.add.at(sums, inverse, per_point)
    values = sums / counts[:, None]
    sites = np.stack(np.unravel_index(uniq, dims), axis=1)
    grid = SparseVoxelGrid(dims, sites, values)
    if return_counts:
        return grid, counts
    return grid


THETA_RANGE = (-math.pi / 18, math.pi / 18)
ALPHA_RANGE = (-math.pi / 18, math.pi / 18)
PHI_RANGE = (-math.pi / 12, math.pi / 12)


@dataclass
class AugmentParams:
    """One rigid perturbation: intrinsic x/y tilts, a z heading, a shift."""
    theta: float = 0.0
    alpha: float = 0.0
    phi: float = 0.0
    delta: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(3)
        for val, (lo, hi), name in ((self.theta, THETA_RANGE, "theta"),
                                    (self.alpha, ALPHA_RANGE, "alpha"),
                                    (self.phi, PHI_RANGE, "phi")):
            if not lo <= val <= hi:
                raise ConfigError(f"{name}={val:.4f} outside [{lo:.4f}, {hi:.4f}]")

    @classmethod
    def sample(cls, rng):
        return cls(theta=rng.uniform(*THETA_RANGE),
                   alpha=rng.uniform(*ALPHA_RANGE),
                   phi=rng.uniform(*PHI_RANGE),
                   delta=rng.standard_normal(3))

    def rotation(self):
        ct, st = math.cos(self.theta), math.sin(self.theta)
        ca, sa = math.cos(self.alpha), math.sin(self.alpha)
        cp, sp = math.cos(self.phi), math.sin(self.phi)
        rx = np.array([[1, 0, 0], [0, ct, -st], [0, st, ct]])
        ry = np.array([[ca, 0, sa], [0, 1, 0], [-sa, 0, ca]])
        rz = np.array([[cp, -sp, 0], [sp, cp, 0], [0, 0, 1]])
        return rz @ ry @ rx


def augment(cloud: SurfacePointCloud, params: AugmentParams):
    """Rotate about the centroid, then translate. Features ride along."""
    centroid = cloud.points.mean(axis=0)
    moved = (cloud.points - centroid) @ params.rotation().T + centroid + params.delta
    return SurfacePointCloud(moved, cloud.features.copy())


def save_ply(cloud: SurfacePointCloud, path):
    names = ["x", "y", "z"] + [f"f{i}" for i in range(cloud.feature_dim)]
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {cloud.n}\n")
        for name in names:
            fh.write(f"property double {name}\n")
        fh.write("end_header\n")
        data = np.concatenate([cloud.points, cloud.features], axis=1)
        for row in data:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_ply(path):
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "ply":
        raise DataError(f"{path}: not a PLY file")
    props = []
    n_vertex = None
    body_at = None
    for i, ln in enumerate(lines[1:], start=1):
        parts = ln.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1:] != ["ascii", "1.0"]:
                raise DataError(f"{path}: only ascii 1.0 PLY is supported")
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise DataError(f"{path}: unsupported element {parts[1]!r}")
            n_vertex = int(parts[2])
        elif parts[0] == "property":
            if parts[1] not in ("double", "float"):
                raise DataError(f"{path}: property {parts[2]!r} is not scalar float")
            props.append(parts[2])
        elif parts[0] == "end_header":
            body_at = i + 1
            break
    if body_at is None or n_vertex is None:
        raise DataError(f"{path}: truncated PLY header")
    if props[:3] != ["x", "y", "z"]:
        raise DataError(f"{path}: first three properties must be x y z")
    rows = lines[body_at:body_at + n_vertex]
    if len(rows) < n_vertex:
        raise DataError(f"{path}: expected {n_vertex} vertex rows, "
                        f"found {len(rows)}")
    try:
        data = np.array([[float(v) for v in row.split()] for row in rows])
    except ValueError as exc:
        raise DataError(f"{path}: malformed vertex row ({exc})") from None
    if data.size and data.shape[1] != len(props):
        raise DataError(f"{path}: vertex rows have {data.shape[1]} values "
                        f"for {len(props)} properties")
    data = data.reshape(n_vertex, len(props))
    return SurfacePointCloud(data[:, :3], data[:, 3:])
