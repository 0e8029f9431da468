"""Biomass regression network: sparse voxel backbone into a transformer
encoder over the surviving 2D token map, read out through a dedicated
summary token and a softplus head so predictions stay positive."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .errors import ConfigError, DataError
from .sparse3d import PyramidBackbone, SparseVoxelGrid


@dataclass
class BioNetConfig:
    feature_dim: int = 8          # semantic channels on the input cloud
    include_offsets: bool = True  # voxel values carry local xyz offsets
    voxel_dims: tuple = (64, 64, 16)
    base_channels: int = 32
    d_model: int = 512
    n_heads: int = 8
    ffn_dim: int = 2048
    n_encoders: int = 5
    head_hidden: tuple = (512, 256)
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by "
                              f"{self.n_heads} heads")
        if self.voxel_dims[2] > 16:
            raise ConfigError("voxel height must be <= 16 to collapse in the backbone")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def in_channels(self):
        return (3 if self.include_offsets else 0) + self.feature_dim

    @property
    def token_map(self):
        ceil16 = lambda d: -(-d // 16)
        return (ceil16(self.voxel_dims[0]), ceil16(self.voxel_dims[1]))

    @property
    def n_tokens(self):
        lt, wt = self.token_map
        return lt * wt


def _linear_params(rng, d_in, d_out, name, scale=None):
    if scale is None:
        scale = math.sqrt(1.0 / d_in)
    w = parameter(rng.standard_normal((d_in, d_out)) * scale, name=f"{name}.w")
    b = parameter(np.zeros(d_out), name=f"{name}.b")
    return w, b


def _affine_params(d, name):
    return (parameter(np.ones(d), name=f"{name}.g"),
            parameter(np.zeros(d), name=f"{name}.b"))


def _dropout(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


class EncoderLayer:
    """Pre-norm transformer encoder: x += MHA(LN(x)); x += FFN(LN(x))."""

    def __init__(self, rng, d_model, n_heads, ffn_dim, name):
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.ln1 = _affine_params(d_model, f"{name}.ln1")
        self.wq, self.bq = _linear_params(rng, d_model, d_model, f"{name}.q")
        self.wk, self.bk = _linear_params(rng, d_model, d_model, f"{name}.k")
        self.wv, self.bv = _linear_params(rng, d_model, d_model, f"{name}.v")
        self.wo, self.bo = _linear_params(rng, d_model, d_model, f"{name}.o")
        self.ln2 = _affine_params(d_model, f"{name}.ln2")
        self.w1, self.b1 = _linear_params(rng, d_model, ffn_dim, f"{name}.f1")
        self.w2, self.b2 = _linear_params(rng, ffn_dim, d_model, f"{name}.f2")

    def _norm(self, x, affine):
        g, b = affine
        return ad.layer_norm(x, axis=-1) * g + b

    def _split_heads(self, x, n_tok):
        return ad.transpose(ad.reshape(x, (n_tok, self.n_heads, self.d_head)),
                            (1, 0, 2))

    def attention(self, x):
        n_tok = x.data.shape[0]
        q = self._split_heads(x @ self.wq + self.bq, n_tok)
        k = self._split_heads(x @ self.wk + self.bk, n_tok)
        v = self._split_heads(x @ self.wv + self.bv, n_tok)
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(self.d_head))
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, v)                       # (h, T, dh)
        merged = ad.reshape(ad.transpose(mixed, (1, 0, 2)), (n_tok, self.d_model))
        return merged @ self.wo + self.bo

    def __call__(self, x, dropout=0.0, rng=None):
        x = x + _dropout(self.attention(self._norm(x, self.ln1)), dropout, rng)
        h = ad.relu(self._norm(x, self.ln2) @ self.w1 + self.b1)
        return x + _dropout(h @ self.w2 + self.b2, dropout, rng)

    def params(self):
        return [*self.ln1, self.wq, self.bq, self.wk, self.bk, self.wv,
                self.bv, self.wo, self.bo, *self.ln2,
                self.w1, self.b1, self.w2, self.b2]


class BioNet:
    """Full regression model from a sparse voxel grid to a biomass scalar."""

    def __init__(self, config: BioNetConfig = None, seed: int = 0):
        self.config = config or BioNetConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.backbone = PyramidBackbone(cfg.in_channels, cfg.base_channels,
                                        seed=seed + 1)
        self.proj_w, self.proj_b = _linear_params(
            rng, self.backbone.out_channels, cfg.d_model, "bn.proj")
        self.summary_token = parameter(
            rng.standard_normal((1, cfg.d_model)) * 0.02, name="bn.summary")
        self.pos_embed = parameter(
            rng.standard_normal((cfg.n_tokens + 1, cfg.d_model)) * 0.02,
            name="bn.pos")
        self.encoders = [
            EncoderLayer(rng, cfg.d_model, cfg.n_heads, cfg.ffn_dim, f"bn.e{i}")
            for i in range(cfg.n_encoders)]
        self.ln_final = _affine_params(cfg.d_model, "bn.lnf")
        dims = [cfg.d_model, *cfg.head_hidden, 1]
        self.head = [_linear_params(rng, dims[i], dims[i + 1], f"bn.h{i}")
                     for i in range(len(dims) - 1)]

    def forward_tokens(self, tokens, rng=None):
        """Biomass estimate from a (n_tokens, backbone_channels) token map."""
        tokens = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens))
        if tokens.data.shape[0] != self.config.n_tokens:
            raise ConfigError(f"expected {self.config.n_tokens} tokens, "
                              f"got {tokens.data.shape[0]}")
        x = tokens @ self.proj_w + self.proj_b
        x = ad.concat([self.summary_token, x], axis=0) + self.pos_embed
        drop = self.config.dropout if rng is not None else 0.0
        for enc in self.encoders:
            x = enc(x, dropout=drop, rng=rng)
        g, b = self.ln_final
        x = ad.layer_norm(x, axis=-1) * g + b
        h = x[0:1, :]
        for w, bias in self.head[:-1]:
            h = ad.relu(h @ w + bias)
        w, bias = self.head[-1]
        return ad.reshape(ad.softplus(h @ w + bias), (1,))

    def __call__(self, grid: SparseVoxelGrid, rng=None):
        tokens, (lt, wt) = self.backbone.tokens(grid)
        if (lt, wt) != self.config.token_map:
            raise ConfigError(
                f"grid dims {grid.dims} produce a {lt}x{wt} token map; the "
                f"model was built for {self.config.token_map}")
        return self.forward_tokens(tokens, rng=rng)

    def params(self):
        out = list(self.backbone.params())
        out += [self.proj_w, self.proj_b, self.summary_token, self.pos_embed]
        for enc in self.encoders:
            out += enc.params()
        out += [*self.ln_final]
        for w, b in self.head:
            out += [w, b]
        return out

    def state_dict(self):
        return {p.name: p.data.copy() for p in self.params()}

    def load_state_dict(self, state):
        for p in self.params():
            if p.name not in state:
                raise DataError(f"checkpoint missing parameter {p.name!r}")
            arr = np.asarray(state[p.name])
            if arr.shape != p.data.shape:
                raise DataError(f"parameter {p.name!r} has shape {arr.shape}, "
                                f"expected {p.data.shape}")
            p.data = arr.astype(np.float64).copy()
