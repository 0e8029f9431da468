"""Neural fields: geometry (SDF + feature trunk), semantic features, radiance.

The geometry net maps an encoded position to a signed distance plus a
geometry feature vector g; the feature net maps g to a c-dim semantic
feature; the radiance net maps (encoded position, encoded direction, g)
to an RGB color in [0,1]. All three share one parameter registry so the
optimizer and checkpoints see a flat name -> array mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .errors import DataError, ShapeError

SOFTPLUS_BETA = 100.0  # sharp softplus for the SDF trunk; smooth grads, near-ReLU values


@dataclass
class EncodingSpec:
    """Fourier feature encoding: x -> (x, sin(2^k pi x), cos(2^k pi x))."""

    position_frequencies: int = 6
    direction_frequencies: int = 4
    include_raw: bool = True

    def dim(self, kind, d=3):
        L = self._freqs(kind)
        return d * ((1 if self.include_raw else 0) + 2 * L)

    def _freqs(self, kind):
        if kind == "position":
            return self.position_frequencies
        if kind == "direction":
            return self.direction_frequencies
        raise ValueError(f"unknown encoding kind {kind!r}")

    def encode(self, x, kind="position"):
        return positional_encode(x, self._freqs(kind), self.include_raw)


def positional_encode(x, frequencies, include_raw=True):
    """Encode the last axis with sin/cos at frequencies 2^0..2^(L-1) times pi.

    Accepts a numpy array or a Tensor and returns the same flavor; the Tensor
    path builds graph nodes so encodings are differentiable w.r.t. x.
    """
    if isinstance(x, Tensor):
        parts = [x] if include_raw else []
        for k in range(frequencies):
            scaled = x * float(2.0 ** k * np.pi)
            parts.append(ad.sin(scaled))
            parts.append(ad.cos(scaled))
        return ad.concat(parts, axis=-1)
    x = np.asarray(x, dtype=np.float64)
    parts = [x] if include_raw else []
    for k in range(frequencies):
        scaled = x * (2.0 ** k * np.pi)
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


class Dense:
    """One affine layer; holds its weight and bias as named parameters."""

    def __init__(self, w, b, name):
        self.w = parameter(w, name=f"{name}.w")
        self.b = parameter(b, name=f"{name}.b")

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b

    def forward_np(self, x):
        return x @ self.w.data + self.b.data


_ACTS = {
    "relu": (ad.relu, lambda x: np.maximum(x, 0.0)),
    "sdf_softplus": (
        lambda t: ad.softplus(t, beta=SOFTPLUS_BETA),
        lambda x: np.maximum(x, 0.0)
        + np.log1p(np.exp(-np.abs(SOFTPLUS_BETA * x))) / SOFTPLUS_BETA,
    ),
}


class MLP:
    """Stack of Dense layers with one hidden activation; linear output."""

    def __init__(self, layers, hidden_act):
        self.layers = layers
        self.act, self.act_np = _ACTS[hidden_act]

    def __call__(self, x):
        for lin in self.layers[:-1]:
            x = self.act(lin(x))
        return self.layers[-1](x)

    def forward_np(self, x):
        for lin in self.layers[:-1]:
            x = self.act_np(lin.forward_np(x))
        return self.layers[-1].forward_np(x)

    def params(self):
        out = []
        for lin in self.layers:
            out.append(lin.w)
            out.append(lin.b)
        return out


@dataclass
class FieldConfig:
    encoding: EncodingSpec = field(default_factory=EncodingSpec)
    geometry_hidden: int = 8
    feature_hidden: int = 2
    radiance_hidden: int = 4
    width: int = 256
    feature_dim: int = 64          # c, the semantic feature size
    sdf_sharpness_std: float = 0.3  # logistic std of Phi at init, scene units
    sphere_radius: float = 0.5      # geometric init target


def _kaiming(rng, n_in, n_out):
    return rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)


def fibonacci_directions(n):
    """n near-uniform unit vectors on the sphere (golden-angle spiral)."""
    k = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _geometry_layers(cfg, rng):
    """SDF trunk initialized so s(x) is a close sphere SDF |x| - r.

    Layer 1 computes u_k . x over well-spread directions u_k, so after the
    near-ReLU activation the weighted sum (4/n) sum_k relu(u_k . x) is a
    quadrature for E|u . x| * 4 = |x|. Unit 0 of every middle layer carries
    that sum, offset by +0.5 to stay in the linear region of the softplus;
    the output layer reads it back with bias -(0.5 + r). Remaining units get
    small random weights and only influence the geometry feature at init.
    """
    enc_dim = cfg.encoding.dim("position")
    width, out_dim = cfg.width, 1 + cfg.width
    sizes = [enc_dim] + [width] * cfg.geometry_hidden + [out_dim]
    layers = []
    last = len(sizes) - 2
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
        b = np.zeros(n_out)
        if i == 0:
            w[:] = 0.0
            w[0:3, :] = fibonacci_directions(n_out).T
        elif i == last:
            w[:, 0] = 0.0
            if last == 1:  # no room for a lane: sum directly into s
                w[:, 0] = 4.0 / n_in
                b[0] = -cfg.sphere_radius
            else:
                w[0, 0] = 1.0
                b[0] = -(0.5 + cfg.sphere_radius)
        elif i == 1:
            w[:, 0] = 4.0 / n_in
            b[0] = 0.5
        else:
            w[:, 0] = 0.0
            w[0, 0] = 1.0
        layers.append(Dense(w, b, f"fg.l{i}"))
    return layers


class FieldSet:
    """The trainable scene representation: geometry, feature, radiance nets."""

    def __init__(self, config=None, seed=0):
        cfg = config or FieldConfig()
        self.config = cfg
        rng = np.random.default_rng(seed)
        w = cfg.width

        self.geometry = MLP(_geometry_layers(cfg, rng), "sdf_softplus")

        f_sizes = [w] + [w] * cfg.feature_hidden + [cfg.feature_dim]
        self.feature = MLP(
            [Dense(_kaiming(rng, a, b), np.zeros(b), f"ff.l{i}")
             for i, (a, b) in enumerate(zip(f_sizes[:-1], f_sizes[1:]))],
            "relu",
        )

        rad_in = cfg.encoding.dim("position") + cfg.encoding.dim("direction") + w
        r_sizes = [rad_in] + [w] * cfg.radiance_hidden + [3]
        self.radiance = MLP(
            [Dense(_kaiming(rng, a, b), np.zeros(b), f"fc.l{i}")
             for i, (a, b) in enumerate(zip(r_sizes[:-1], r_sizes[1:]))],
            "relu",
        )

        # sharpness of Phi(scale * sdf), kept positive via exp; init so the
        # logistic density has the configured std: scale = pi / (std*sqrt(3))
        s0 = np.pi / (cfg.sdf_sharpness_std * np.sqrt(3.0))
        self._log_scale = parameter(np.array(np.log(s0)), name="density_scale")

    # -- parameters and serialization ------------------------------------

    def params(self):
        return (self.geometry.params() + self.feature.params()
                + self.radiance.params() + [self._log_scale])

    def state_dict(self):
        return {p.name: p.data for p in self.params()}

    def load_state_dict(self, arrays):
        for p in self.params():
            if p.name not in arrays:
                raise DataError(f"checkpoint missing parameter {p.name!r}")
            a = np.asarray(arrays[p.name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise DataError(
                    f"checkpoint parameter {p.name!r} has shape {a.shape}, "
                    f"expected {p.data.shape}")
            p.data = a.copy()

    def density_scale(self):
        """Trainable sharpness, strictly positive by construction."""
        return ad.exp(self._log_scale)

    # -- field evaluation ---------------------------------------------------

    def _check_cube(self, x, mode):
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if mode == "strict":
            if np.any(np.abs(data) > 1.0 + 1e-9):
                worst = float(np.abs(data).max())
                raise DataError(f"point outside scene cube [-1,1]^3 (max |coord| {worst:.4g})")
            return x
        if mode == "clamp":
            clipped = np.clip(data, -1.0, 1.0)
            if isinstance(x, Tensor):
                # clamp values without detaching the graph where untouched
                if np.array_equal(clipped, data):
                    return x
                return x + Tensor(clipped - data)
            return clipped
        raise ValueError(f"unknown cube mode {mode!r}")

    def eval_geometry(self, x, mode="clamp"):
        """Signed distance and geometry feature at points x (n,3)."""
        x = self._check_cube(x, mode)
        if isinstance(x, Tensor):
            out = self.geometry(self.config.encoding.encode(x, "position"))
            return out[:, 0:1], out[:, 1:]
        out = self.geometry.forward_np(self.config.encoding.encode(x, "position"))
        return out[:, 0:1], out[:, 1:]

    def eval_feature(self, g):
        """Semantic feature from the geometry feature; view-independent."""
        if isinstance(g, Tensor):
            return self.feature(g)
        return self.feature.forward_np(g)

    def eval_radiance(self, x, v, g, mode="clamp"):
        """RGB in [0,1] at x viewed along unit direction v."""
        vdata = v.data if isinstance(v, Tensor) else np.asarray(v)
        norms = np.linalg.norm(vdata, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ShapeError(
                f"viewing directions must be unit vectors (|v| range "
                f"[{norms.min():.6f}, {norms.max():.6f}])")
        x = self._check_cube(x, mode)
        enc = self.config.encoding
        if isinstance(x, Tensor) or isinstance(g, Tensor):
            x = x if isinstance(x, Tensor) else Tensor(x)
            v = v if isinstance(v, Tensor) else Tensor(vdata)
            g = g if isinstance(g, Tensor) else Tensor(g)
            h = ad.concat([enc.encode(x, "position"), enc.encode(v, "direction"), g], axis=-1)
            return ad.sigmoid(self.radiance(h))
        h = np.concatenate([enc.encode(x, "position"), enc.encode(vdata, "direction"), g], axis=-1)
        out = self.radiance.forward_np(h)
        return 1.0 / (1.0 + np.exp(-np.clip(out, -500, 500)))

    def sdf_spatial_gradient(self, x, h=1e-3):
        """d(sdf)/dx by central differences, built in-graph.

        Six extra geometry evaluations; used by the eikonal regularizer,
        which needs the spatial gradient as a differentiable quantity.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        cols = []
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            sp, _ = self.eval_geometry(x + Tensor(e), mode="clamp")
            sm, _ = self.eval_geometry(x - Tensor(e), mode="clamp")
            cols.append((sp - sm) * (0.5 / h))
        return ad.concat(cols, axis=-1)


def spherical_to_unit(theta, phi):
    """(polar, azimuth) angles to a unit 3-vector; helper for 2-angle inputs."""
    st, ct = np.sin(theta), np.cos(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), ct], axis=-1)


def unit_to_spherical(v):
    v = np.asarray(v, dtype=np.float64)
    theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    phi = np.arctan2(v[..., 1], v[..., 0])
    return theta, phi
