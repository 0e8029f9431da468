"""Synthetic scenes with exact analytic ground truth.

Primitives are analytic SDFs with an albedo and a feature label; images come
from sphere tracing plus Lambertian shading under one directional light, so
every pixel, feature vector, depth, and surface point has a closed-form
reference the tests can trust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .render import generate_rays
from .scene import SceneBundle, look_at_camera

HIT_EPS = 1e-6
MAX_STEPS = 256


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray
    feature: np.ndarray

    def sdf(self, x):
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def surface_samples(self, rng, n):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.center + self.radius * d


@dataclass
class Box:
    center: np.ndarray
    half: np.ndarray
    albedo: np.ndarray
    feature: np.ndarray

    def sdf(self, x):
        q = np.abs(x - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def surface_samples(self, rng, n):
        h = np.asarray(self.half, dtype=np.float64)
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        areas = np.repeat(areas, 2)
        face = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(-1, 1, (n, 3)) * h
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts[np.arange(n), axis] = sign * h[axis]
        return self.center + pts


@dataclass
class GroundPlane:
    z0: float
    albedo: np.ndarray
    feature: np.ndarray
    extent: float = 0.95  # sampling footprint in x,y

    def sdf(self, x):
        return x[..., 2] - self.z0

    def surface_samples(self, rng, n):
        xy = rng.uniform(-self.extent, self.extent, (n, 2))
        return np.concatenate([xy, np.full((n, 1), self.z0)], axis=1)


def scene_sdf(primitives, x):
    """Min over primitive SDFs plus the index of the nearest primitive."""
    vals = np.stack([p.sdf(x) for p in primitives], axis=-1)
    idx = vals.argmin(axis=-1)
    return np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0], idx


def scene_normal(primitives, x, h=1e-5):
    g = np.zeros_like(x)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[..., a] = scene_sdf(primitives, x + e)[0] - scene_sdf(primitives, x - e)[0]
    return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)


def sphere_trace(primitives, o, v, t_start, t_stop):
    """Vectorized sphere tracing; returns (t_hit, hit mask, primitive index)."""
    m = o.shape[0]
    t = t_start.copy()
    hit = np.zeros(m, dtype=bool)
    prim = np.full(m, -1)
    active = t < t_stop
    for _ in range(MAX_STEPS):
        if not active.any():
            break
        x = o[active] + t[active, None] * v[active]
        s, idx = scene_sdf(primitives, x)
        converged = s < HIT_EPS
        ai = np.flatnonzero(active)
        hit[ai[converged]] = True
        prim[ai[converged]] = idx[converged]
        t[ai] += np.maximum(s, 0.0)
        still = ~converged & (t[ai] <= t_stop[ai])
        active[ai] = still
    return t, hit, prim


LIGHT_DIR = np.array([0.4, -0.35, 0.85]) / np.linalg.norm([0.4, -0.35, 0.85])


def shade(primitives, x, prim_idx):
    """Lambertian: albedo * (ambient + diffuse * max(n.l, 0))."""
    albedo = np.stack([primitives[i].albedo for i in prim_idx])
    n = scene_normal(primitives, x)
    lam = np.maximum(n @ LIGHT_DIR, 0.0)
    return np.clip(albedo * (0.3 + 0.7 * lam[:, None]), 0.0, 1.0)


def default_primitives(feature_dim=8):
    """Sphere resting above a ground plane; orthogonal feature labels."""
    f_sphere = np.zeros(feature_dim)
    f_sphere[0] = 1.0
    f_plane = np.zeros(feature_dim)
    f_plane[min(1, feature_dim - 1)] = 1.0
    return [
        Sphere(np.array([0.0, 0.0, 0.05]), 0.35,
               np.array([0.85, 0.35, 0.25]), f_sphere),
        GroundPlane(-0.3, np.array([0.3, 0.55, 0.3]), f_plane),
    ]


def circle_cameras(n_views, width, height, radius=2.2, z=0.9, focal=None,
                   start_angle=0.0, prefix="view"):
    cams = []
    for i in range(n_views):
        a = start_angle + 2.0 * np.pi * i / n_views
        pos = (radius * np.cos(a), radius * np.sin(a), z)
        cams.append(look_at_camera(f"{prefix}{i:03d}", pos, (0, 0, 0),
                                   width, height, focal))
    return cams


def render_camera(primitives, cam, background=(0.5, 0.5, 0.5)):
    """Ray-traced image, feature map, and depth for one camera."""
    uv = np.stack(np.meshgrid(np.arange(cam.width), np.arange(cam.height)),
                  axis=-1).reshape(-1, 2).astype(np.float64)
    rays = generate_rays(cam, uv)
    t_hit, hit, prim = sphere_trace(primitives, rays.o, rays.v, rays.t_near, rays.t_far)
    hit &= rays.valid

    img = np.tile(np.asarray(background, dtype=np.float64), (len(rays), 1))
    c = primitives[0].feature.shape[0]
    fmap = np.zeros((len(rays), c), dtype=np.float64)
    depth = np.zeros(len(rays))
    if hit.any():
        x = rays.o[hit] + t_hit[hit, None] * rays.v[hit]
        img[hit] = shade(primitives, x, prim[hit])
        fmap[hit] = np.stack([primitives[i].feature for i in prim[hit]])
        depth[hit] = t_hit[hit]
    H, W = cam.height, cam.width
    return (img.reshape(H, W, 3), fmap.reshape(H, W, c).astype(np.float32),
            depth.reshape(H, W).astype(np.float32), hit.reshape(H, W))


def surface_points(primitives, rng, n):
    """Surface samples of the union, rejecting points occluded inside others."""
    out = []
    need = n
    for _ in range(1000):
        if need <= 0:
            break
        per = max(need // len(primitives) + 1, 8)
        cand = np.concatenate([p.surface_samples(rng, per) for p in primitives])
        s, _ = scene_sdf(primitives, cand)
        keep = cand[np.abs(s) < 1e-6]
        keep = keep[np.abs(keep).max(axis=1) <= 1.0]  # stay inside the scene cube
        out.append(keep)
        need = n - sum(len(o) for o in out)
    else:
        raise DataError("surface sampling rejected too many points; "
                        "primitives barely intersect the scene cube")
    return np.concatenate(out)[:n]


def synth_scene(primitives=None, n_views=20, width=96, height=96, focal=None,
                n_sparse=2000, seed=0, camera_radius=2.2, camera_height=0.9,
                start_angle=0.0, background=(0.5, 0.5, 0.5)):
    """A complete SceneBundle with ground-truth depth, deterministic per seed."""
    primitives = primitives if primitives is not None else default_primitives()
    dims = {p.feature.shape[0] for p in primitives}
    if len(dims) != 1:
        raise ConfigError(f"primitives disagree on feature dim: {sorted(dims)}")
    rng = np.random.default_rng(seed)
    cams = circle_cameras(n_views, width, height, camera_radius, camera_height,
                          focal, start_angle)
    images, fmaps, depths = [], [], []
    for cam in cams:
        img, fmap, depth, _ = render_camera(primitives, cam, background)
        # quantize now so the in-memory bundle equals its PNG round trip
        images.append(np.round(img * 255.0) / 255.0)
        fmaps.append(fmap)
        depths.append(depth)
    pts = surface_points(primitives, rng, n_sparse)
    return SceneBundle(cams, images, fmaps, pts, np.eye(4), depths)


def synth_cloud(seed, n_points, feature_dim=8, n_blobs=3, extent=0.7):
    """A clustered synthetic surface cloud for biomass-regression tests."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-extent, extent, (n_blobs, 3)) * np.array([1, 1, 0.4])
    radii = rng.uniform(0.1, 0.3, n_blobs)
    counts = rng.multinomial(n_points, np.ones(n_blobs) / n_blobs)
    pts, feats = [], []
    for c, r, k in zip(centers, radii, counts):
        d = rng.standard_normal((k, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts.append(c + r * d)
        f = rng.standard_normal((1, feature_dim)) * 0.5
        feats.append(np.tile(f, (k, 1)) + rng.standard_normal((k, feature_dim)) * 0.05)
    return np.clip(np.concatenate(pts), -0.99, 0.99), np.concatenate(feats)
