"""Ray generation, sampling, SDF-to-opacity conversion, and compositing.

Two parallel code paths run through this module: a numpy path for
inference (image rendering, metric sweeps) and a Tensor path used during
training where gradients must flow back into the fields. The math is the
same; tests pin the numpy path against closed forms and the Tensor path
against the numpy path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError

PHI_FLOOR = 1e-12   # opacity ratio denominator floor
T_EPS = 1e-10       # keeps log(1 - alpha) finite in the graph


@dataclass
class Rays:
    """A batch of rays; degenerate ones (missing the cube) have valid=False."""

    o: np.ndarray        # (m,3) origins
    v: np.ndarray        # (m,3) unit directions
    t_near: np.ndarray   # (m,)
    t_far: np.ndarray    # (m,)
    valid: np.ndarray    # (m,) bool

    def __len__(self):
        return self.o.shape[0]


@dataclass
class RaySamples:
    t: np.ndarray    # (m,n) ascending positions
    x: np.ndarray    # (m,n,3) points o + t*v
    dt: np.ndarray   # (m,n) segment lengths; last = t_far - t[n-1]


@dataclass
class RenderResult:
    color: np.ndarray          # (m,3)
    feature: np.ndarray        # (m,c)
    depth: np.ndarray          # (m,)
    weights: np.ndarray        # (m,n)
    transmittance: np.ndarray  # (m,n), T[0] = 1
    sigma: np.ndarray = None   # (m,n) effective density, inference path only


def pixel_directions(camera, pixels):
    """Camera-frame unit directions through the given (u,v) positions."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any(u < -0.5) or np.any(u > camera.width - 0.5) or \
            np.any(v < -0.5) or np.any(v > camera.height - 0.5):
        raise DataError(f"camera {camera.name}: pixel coordinates outside image bounds")
    d = np.stack([(u - camera.cx) / camera.fx,
                  (v - camera.cy) / camera.fy,
                  np.ones_like(u)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_rays(camera, pixels, bounds=1.0):
    """World-space rays through pixel centers, clipped to the scene cube."""
    d_cam = pixel_directions(camera, pixels)
    v = d_cam @ camera.rotation.T
    o = np.broadcast_to(camera.position, v.shape).copy()
    t_near, t_far, valid = intersect_cube(o, v, bounds)
    return Rays(o, v, t_near, t_far, valid)


def project(camera, points):
    """World points to (u,v) pixel coordinates plus camera-frame depth z."""
    p = (np.asarray(points, dtype=np.float64) - camera.position) @ camera.rotation
    z = p[:, 2]
    u = camera.fx * p[:, 0] / z + camera.cx
    v = camera.fy * p[:, 1] / z + camera.cy
    return np.stack([u, v], axis=-1), z


def intersect_cube(o, v, bounds=1.0):
    """Slab test against [-bounds, bounds]^3; t_near clamped to >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-bounds - o) / v
        t1 = (bounds - o) / v
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # axis-parallel rays: the slab is either always or never satisfied
    inside = np.abs(o) <= bounds
    lo = np.where(np.isnan(lo), np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(np.isnan(hi), np.where(inside, np.inf, -np.inf), hi)
    t_near = np.maximum(lo.max(axis=-1), 0.0)
    t_far = hi.min(axis=-1)
    valid = t_far > t_near
    t_near = np.where(valid, t_near, 0.0)
    t_far = np.where(valid, t_far, 0.0)
    return t_near, t_far, valid


def sample_ray(rays, n, mode="stratified", rng=None):
    """n samples per ray: stratified draws one uniform point per equal bin."""
    if n < 2:
        raise ConfigError(f"need at least 2 samples per ray, got {n}")
    m = len(rays)
    span = (rays.t_far - rays.t_near)[:, None]
    bins = np.arange(n, dtype=np.float64)[None, :]
    if mode == "uniform":
        frac = (bins + 0.5) / n
    elif mode == "stratified":
        rng = rng or np.random.default_rng(0)
        frac = (bins + rng.random((m, n))) / n
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    t = rays.t_near[:, None] + span * frac
    dt = np.empty_like(t)
    dt[:, :-1] = t[:, 1:] - t[:, :-1]
    dt[:, -1] = rays.t_far - t[:, -1]
    x = rays.o[:, None, :] + t[..., None] * rays.v[:, None, :]
    return RaySamples(t, x, dt)


def alpha_from_sdf(s_i, s_next, scale):
    """Discrete opacity from consecutive signed distances.

    alpha = max((Phi(scale*s_i) - Phi(scale*s_next)) / Phi(scale*s_i), 0)
    with Phi the logistic sigmoid, floored at 1e-12 in the denominator.
    """
    if isinstance(s_i, Tensor) or isinstance(s_next, Tensor) or isinstance(scale, Tensor):
        s_i = s_i if isinstance(s_i, Tensor) else Tensor(s_i)
        s_next = s_next if isinstance(s_next, Tensor) else Tensor(s_next)
        phi_i = ad.sigmoid(s_i * scale)
        phi_n = ad.sigmoid(s_next * scale)
        return ad.relu((phi_i - phi_n) / ad.clip_min(phi_i, PHI_FLOOR))
    phi_i = _sigmoid(scale * np.asarray(s_i, dtype=np.float64))
    phi_n = _sigmoid(scale * np.asarray(s_next, dtype=np.float64))
    return np.maximum((phi_i - phi_n) / np.maximum(phi_i, PHI_FLOOR), 0.0)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def alpha_from_sigma(sigma, dt):
    """Continuous-quadrature opacity 1 - exp(-sigma*dt)."""
    if isinstance(sigma, Tensor):
        return 1.0 - ad.exp(-(sigma * dt))
    return 1.0 - np.exp(-np.asarray(sigma) * dt)


def composite(alphas):
    """Weights and transmittance from per-sample opacities along axis -1.

    T[0] = 1, T[i+1] = T[i] * (1 - alpha[i]), w[i] = T[i] * alpha[i].
    The Tensor path runs in log space so gradients stay bounded.
    """
    if isinstance(alphas, Tensor):
        log_t = ad.cumsum(ad.log(1.0 - alphas + T_EPS), axis=-1, exclusive=True)
        T = ad.exp(log_t)
        return T * alphas, T
    alphas = np.asarray(alphas, dtype=np.float64)
    surv = np.cumprod(1.0 - alphas, axis=-1)
    T = np.concatenate([np.ones_like(alphas[..., :1]), surv[..., :-1]], axis=-1)
    return T * alphas, T


def render_rays(fields, rays, n_samples=64, mode="stratified", rng=None,
                background=(0.5, 0.5, 0.5)):
    """Inference-path render: composited color, feature, and expected depth.

    SDF quadrature uses opacities between consecutive samples, so the last
    sample's weight is identically zero.
    """
    m = len(rays)
    bg = np.asarray(background, dtype=np.float64)
    c_dim = fields.config.feature_dim
    out = RenderResult(
        color=np.tile(bg, (m, 1)),
        feature=np.zeros((m, c_dim)),
        depth=rays.t_far.copy(),
        weights=np.zeros((m, n_samples)),
        transmittance=np.ones((m, n_samples)),
        sigma=np.zeros((m, n_samples)),
    )
    live = np.flatnonzero(rays.valid)
    if live.size == 0:
        return out
    sub = Rays(rays.o[live], rays.v[live], rays.t_near[live], rays.t_far[live],
               rays.valid[live])
    samples = sample_ray(sub, n_samples, mode, rng)
    k = live.size
    flat_x = samples.x.reshape(-1, 3)
    s, g = fields.eval_geometry(flat_x)
    f = fields.eval_feature(g)
    flat_v = np.repeat(sub.v, n_samples, axis=0)
    c = fields.eval_radiance(flat_x, flat_v, g)

    s = s.reshape(k, n_samples)
    scale = float(fields.density_scale().data)
    alphas = np.zeros((k, n_samples))
    alphas[:, :-1] = alpha_from_sdf(s[:, :-1], s[:, 1:], scale)
    w, T = composite(alphas)

    acc = w.sum(axis=-1)
    color = np.einsum("kn,knc->kc", w, c.reshape(k, n_samples, 3)) + (1 - acc)[:, None] * bg
    feature = np.einsum("kn,knc->kc", w, f.reshape(k, n_samples, -1))
    depth = (w * samples.t).sum(axis=-1) / np.maximum(acc, 1e-8)

    out.color[live] = color
    out.feature[live] = feature
    out.depth[live] = depth
    out.weights[live] = w
    out.transmittance[live] = T
    with np.errstate(divide="ignore"):
        out.sigma[live] = -np.log(np.maximum(1.0 - alphas, 1e-300)) / np.maximum(samples.dt, 1e-12)
    return out


@dataclass
class ImageRender:
    color: np.ndarray    # (h,w,3)
    feature: np.ndarray  # (h,w,c)
    depth: np.ndarray    # (h,w)
    acc: np.ndarray      # (h,w) accumulated opacity


def render_image(fields, camera, n_samples=64, chunk=4096,
                 background=(0.5, 0.5, 0.5)):
    """Deterministic full-frame render (uniform sampling, numpy path)."""
    h, w = camera.height, camera.width
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
    colors = np.zeros((h * w, 3))
    feats = np.zeros((h * w, fields.config.feature_dim))
    depth = np.zeros(h * w)
    acc = np.zeros(h * w)
    for start in range(0, pixels.shape[0], chunk):
        rays = generate_rays(camera, pixels[start:start + chunk])
        res = render_rays(fields, rays, n_samples, mode="uniform",
                          background=background)
        sl = slice(start, start + len(rays))
        colors[sl] = res.color
        feats[sl] = res.feature
        depth[sl] = res.depth
        acc[sl] = res.weights.sum(axis=-1)
    return ImageRender(color=colors.reshape(h, w, 3),
                       feature=feats.reshape(h, w, -1),
                       depth=depth.reshape(h, w),
                       acc=acc.reshape(h, w))


def render_rays_graph(fields, rays, n_samples=64, mode="stratified", rng=None,
                      background=(0.5, 0.5, 0.5)):
    """Training-path render returning Tensors (color, feature, weights, acc).

    Degenerate rays must be filtered out by the caller (the training loop
    samples pixels whose rays hit the cube).
    """
    if not np.all(rays.valid):
        raise DataError("render_rays_graph: all rays must intersect the scene cube")
    m = len(rays)
    samples = sample_ray(rays, n_samples, mode, rng)
    flat_x = Tensor(samples.x.reshape(-1, 3))
    s, g = fields.eval_geometry(flat_x)
    f = fields.eval_feature(g)
    flat_v = Tensor(np.repeat(rays.v, n_samples, axis=0))
    c = fields.eval_radiance(flat_x, flat_v, g)

    s = ad.reshape(s, (m, n_samples))
    scale = fields.density_scale()
    alphas = alpha_from_sdf(s[:, :-1], s[:, 1:], scale)
    w_inner, _ = composite(alphas)                      # (m, n-1)
    acc = ad.sum_(w_inner, axis=-1, keepdims=True)      # (m, 1)

    c = ad.reshape(c, (m, n_samples, 3))[:, :-1, :]
    f = ad.reshape(f, (m, n_samples, -1))[:, :-1, :]
    w3 = ad.reshape(w_inner, (m, n_samples - 1, 1))
    bg = np.asarray(background, dtype=np.float64)
    color = ad.sum_(w3 * c, axis=1) + (1.0 - acc) * Tensor(bg[None, :])
    feature = ad.sum_(w3 * f, axis=1)
    return color, feature, w_inner, acc
