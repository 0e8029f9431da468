"""Sparse 3D convolutions over active voxel sites, plus the pyramid backbone.

A grid stores only its active sites (unique integer (i,j,k) triples) and one
channel vector per site. Submanifold convolution keeps the active set fixed;
strided convolution ceil-halves the dims, activating exactly the floor-image
of the input sites. Both are assembled from gather/matmul autodiff ops, so
kernels are trainable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .errors import ConfigError, ShapeError

_OFFSETS = np.array([(a, b, c)
                     for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])


@dataclass
class SparseVoxelGrid:
    dims: tuple              # (l, w, h)
    sites: np.ndarray        # (m,3) unique int voxel indices
    values: object           # (m,C) numpy array or Tensor

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.sites = np.asarray(self.sites, dtype=np.int64).reshape(-1, 3)
        if not isinstance(self.values, Tensor):
            self.values = np.asarray(self.values, dtype=np.float64)
        if self.sites.shape[0] != _rows(self.values):
            raise ShapeError(f"{self.sites.shape[0]} sites but "
                             f"{_rows(self.values)} value rows")
        if self.sites.size:
            if self.sites.min() < 0 or np.any(self.sites >= np.array(self.dims)):
                raise ShapeError("active site outside grid dims")
            packed = self._pack(self.sites)
            if np.unique(packed).size != packed.size:
                raise ShapeError("duplicate active sites")

    @property
    def channels(self):
        v = self.values.data if isinstance(self.values, Tensor) else self.values
        return v.shape[1]

    @property
    def n_active(self):
        return self.sites.shape[0]

    def _pack(self, sites):
        l, w, h = self.dims
        return (sites[:, 0] * w + sites[:, 1]) * h + sites[:, 2]

    def values_np(self):
        return self.values.data if isinstance(self.values, Tensor) else self.values

    def densify(self):
        out = np.zeros(self.dims + (self.channels,))
        out[self.sites[:, 0], self.sites[:, 1], self.sites[:, 2]] = self.values_np()
        return out


def from_dense(dense, sites=None):
    """Sparse grid from a dense (l,w,h,C) array; default sites = nonzero."""
    dense = np.asarray(dense, dtype=np.float64)
    if sites is None:
        mask = np.abs(dense).sum(axis=-1) > 0
        sites = np.argwhere(mask)
    return SparseVoxelGrid(dense.shape[:3], sites,
                           dense[sites[:, 0], sites[:, 1], sites[:, 2]])


def _rows(values):
    return values.data.shape[0] if isinstance(values, Tensor) else np.asarray(values).shape[0]


def _as_value_tensor(values):
    return values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=np.float64))


def _neighbor_rows(grid, centers):
    """Row index (+1, 0 for absent) of each 3x3x3 neighbor of each center."""
    l, w, h = grid.dims
    lut = {}
    for row, s in enumerate(grid.sites):
        lut[(s[0], s[1], s[2])] = row + 1
    m = centers.shape[0]
    idx = np.zeros((m, 27), dtype=np.intp)
    for o, (da, db, dc) in enumerate(_OFFSETS):
        for i in range(m):
            key = (centers[i, 0] + da, centers[i, 1] + db, centers[i, 2] + dc)
            idx[i, o] = lut.get(key, 0)
    return idx


def _conv_at(grid, centers, kernel, bias):
    """Convolution values at integer center coords, via one gather + matmul."""
    kdata = kernel.data if isinstance(kernel, Tensor) else np.asarray(kernel)
    if kdata.shape[:3] != (3, 3, 3) or kdata.shape[3] != grid.channels:
        raise ShapeError(f"kernel {kdata.shape} does not fit a 3x3x3 conv over "
                         f"{grid.channels} channels")
    c_in, c_out = kdata.shape[3], kdata.shape[4]
    vals = _as_value_tensor(grid.values)
    padded = ad.concat([Tensor(np.zeros((1, c_in))), vals], axis=0)
    nbr = _neighbor_rows(grid, centers)
    gathered = ad.gather_rows(padded, nbr.reshape(-1))          # (m*27, c_in)
    patches = ad.reshape(gathered, (centers.shape[0], 27 * c_in))
    kern = kernel if isinstance(kernel, Tensor) else Tensor(kdata)
    kmat = ad.reshape(kern, (27 * c_in, c_out))
    out = ad.matmul(patches, kmat)
    if bias is not None:
        out = out + (bias if isinstance(bias, Tensor) else Tensor(np.asarray(bias)))
    return out


def submanifold_conv(grid, kernel, bias=None):
    """3x3x3 conv evaluated at the existing sites; never dilates the set."""
    values = _conv_at(grid, grid.sites, kernel, bias)
    return SparseVoxelGrid(grid.dims, grid.sites, values)


def strided_conv(grid, kernel, bias=None):
    """Stride-2 conv; output site floor(p/2) is active iff some input p maps there.

    Output dims are ceil-halved, which implicitly zero-pads odd extents.
    Values read the full 3x3x3 input neighborhood around 2*site, so they
    agree with a dense stride-2 convolution at the active sites.
    """
    out_dims = tuple((d + 1) // 2 for d in grid.dims)
    out_sites = np.unique(grid.sites // 2, axis=0)
    values = _conv_at(grid, out_sites * 2, kernel, bias)
    return SparseVoxelGrid(out_dims, out_sites, values)


def site_norm(grid, gamma, beta, eps=1e-6):
    """Per-channel normalization over the active sites, with affine."""
    vals = _as_value_tensor(grid.values)
    normed = ad.layer_norm(vals, axis=0, eps=eps)
    out = normed * gamma + beta
    return SparseVoxelGrid(grid.dims, grid.sites, out)


def relu_grid(grid):
    return SparseVoxelGrid(grid.dims, grid.sites, ad.relu(_as_value_tensor(grid.values)))


def _kernel_param(rng, c_in, c_out, name):
    fan_in = 27 * c_in
    w = rng.standard_normal((3, 3, 3, c_in, c_out)) * np.sqrt(2.0 / fan_in)
    return parameter(w, name=f"{name}.k"), parameter(np.zeros(c_out), name=f"{name}.b")


class ResNetBlock:
    """conv - norm - relu - conv - norm, plus the identity skip."""

    def __init__(self, rng, channels, name):
        self.k1, self.b1 = _kernel_param(rng, channels, channels, f"{name}.c1")
        self.k2, self.b2 = _kernel_param(rng, channels, channels, f"{name}.c2")
        self.g1 = parameter(np.ones(channels), name=f"{name}.n1.g")
        self.be1 = parameter(np.zeros(channels), name=f"{name}.n1.b")
        self.g2 = parameter(np.ones(channels), name=f"{name}.n2.g")
        self.be2 = parameter(np.zeros(channels), name=f"{name}.n2.b")

    def __call__(self, grid):
        x = _as_value_tensor(grid.values)
        g = submanifold_conv(grid, self.k1, self.b1)
        g = site_norm(g, self.g1, self.be1)
        g = relu_grid(g)
        g = submanifold_conv(g, self.k2, self.b2)
        g = site_norm(g, self.g2, self.be2)
        return SparseVoxelGrid(grid.dims, grid.sites, g.values + x)

    def params(self):
        return [self.k1, self.b1, self.k2, self.b2,
                self.g1, self.be1, self.g2, self.be2]


class PyramidBackbone:
    """Stem conv to the base width, then 4 levels of (2 ResNet blocks +
    strided downsample doubling channels); the height axis must collapse
    to 1 so the survivors form a 2D token map."""

    LEVELS = 4

    def __init__(self, in_channels, base_channels=32, seed=0):
        rng = np.random.default_rng(seed)
        self.base_channels = base_channels
        self.stem_k, self.stem_b = _kernel_param(rng, in_channels, base_channels, "bn.stem")
        self.levels = []
        ch = base_channels
        for lvl in range(self.LEVELS):
            blocks = [ResNetBlock(rng, ch, f"bn.l{lvl}.r0"),
                      ResNetBlock(rng, ch, f"bn.l{lvl}.r1")]
            down_k, down_b = _kernel_param(rng, ch, 2 * ch, f"bn.l{lvl}.down")
            self.levels.append((blocks, down_k, down_b))
            ch *= 2
        self.out_channels = ch

    def level_widths(self):
        return [self.base_channels * 2 ** i for i in range(self.LEVELS)]

    def __call__(self, grid):
        if grid.dims[2] > 2 ** self.LEVELS:
            raise ConfigError(
                f"grid height {grid.dims[2]} cannot collapse to 1 in "
                f"{self.LEVELS} halvings; use height <= {2 ** self.LEVELS}")
        g = submanifold_conv(grid, self.stem_k, self.stem_b)
        for blocks, down_k, down_b in self.levels:
            for block in blocks:
                g = block(g)
            g = strided_conv(g, down_k, down_b)
        return g

    def tokens(self, grid):
        """Dense (l_t * w_t, C) token matrix from the collapsed grid."""
        g = self(grid)
        lt, wt, ht = g.dims
        assert ht == 1
        flat_idx = g.sites[:, 0] * wt + g.sites[:, 1]
        dense = ad.scatter_add(_as_value_tensor(g.values), flat_idx, lt * wt)
        return dense, (lt, wt)

    def params(self):
        out = [self.stem_k, self.stem_b]
        for blocks, down_k, down_b in self.levels:
            for b in blocks:
                out.extend(b.params())
            out.extend([down_k, down_b])
        return out
