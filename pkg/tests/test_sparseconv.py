import numpy as np
import pytest

from biofields import sparse3d as sp
from biofields.autodiff import Tensor
from biofields.errors import ConfigError, ShapeError

from oracles import dense_conv3d, fd_gradient, rel_err


def random_grid(rng, max_dim=16, c=3, density=0.3):
    dims = tuple(int(rng.integers(3, max_dim + 1)) for _ in range(3))
    n_total = dims[0] * dims[1] * dims[2]
    n = max(1, int(density * n_total))
    flat = rng.choice(n_total, size=n, replace=False)
    sites = np.stack(np.unravel_index(flat, dims), axis=1)
    values = rng.standard_normal((n, c))
    return sp.SparseVoxelGrid(dims, sites, values)


def test_grid_validation():
    with pytest.raises(ShapeError):
        sp.SparseVoxelGrid((4, 4, 4), [[0, 0, 0], [0, 0, 0]], np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        sp.SparseVoxelGrid((4, 4, 4), [[0, 0, 4]], np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        sp.SparseVoxelGrid((4, 4, 4), [[0, 0, 1]], np.zeros((2, 2)))


def test_dense_round_trip():
    rng = np.random.default_rng(0)
    g = random_grid(rng)
    back = sp.from_dense(g.densify(), sites=g.sites)
    assert np.array_equal(back.sites, g.sites)
    assert np.allclose(back.values_np(), g.values_np())


def test_identity_kernel_is_noop():
    rng = np.random.default_rng(1)
    g = random_grid(rng, c=4)
    kernel = np.zeros((3, 3, 3, 4, 4))
    kernel[1, 1, 1] = np.eye(4)
    out = sp.submanifold_conv(g, kernel)
    assert np.allclose(out.values_np(), g.values_np(), atol=1e-12)
    assert np.array_equal(out.sites, g.sites)


def test_isolated_site_does_not_dilate():
    kernel = np.random.default_rng(2).standard_normal((3, 3, 3, 2, 5))
    bias = np.arange(5.0)
    g = sp.SparseVoxelGrid((8, 8, 8), [[3, 4, 2]], [[1.5, -0.5]])
    out = sp.submanifold_conv(g, kernel, bias)
    assert out.n_active == 1
    expected = g.values_np()[0] @ kernel[1, 1, 1] + bias
    assert np.allclose(out.values_np()[0], expected, atol=1e-12)


def test_submanifold_matches_dense_oracle():
    rng = np.random.default_rng(3)
    for _ in range(40):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        g = random_grid(rng, c=c_in)
        kernel = rng.standard_normal((3, 3, 3, c_in, c_out))
        bias = rng.standard_normal(c_out)
        out = sp.submanifold_conv(g, kernel, bias)
        ref = dense_conv3d(g.densify(), kernel, bias, stride=1)
        ref_at_sites = ref[g.sites[:, 0], g.sites[:, 1], g.sites[:, 2]]
        assert np.abs(out.values_np() - ref_at_sites).max() < 1e-9


def test_strided_matches_dense_oracle():
    rng = np.random.default_rng(4)
    for _ in range(40):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        g = random_grid(rng, c=c_in)
        kernel = rng.standard_normal((3, 3, 3, c_in, c_out))
        bias = rng.standard_normal(c_out)
        out = sp.strided_conv(g, kernel, bias)
        assert out.dims == tuple((d + 1) // 2 for d in g.dims)
        expected_sites = np.unique(g.sites // 2, axis=0)
        assert np.array_equal(out.sites, expected_sites)
        ref = dense_conv3d(g.densify(), kernel, bias, stride=2)
        ref_at_sites = ref[out.sites[:, 0], out.sites[:, 1], out.sites[:, 2]]
        assert np.abs(out.values_np() - ref_at_sites).max() < 1e-9


def test_strided_crosses_parent_boundaries():
    # site (1,1,1) maps to output (0,0,0); site (2,2,2) maps to (1,1,1) but
    # still sits in the 3x3x3 neighborhood of center (2,2,2) = 2*(1,1,1).
    # Check the conv at (0,0,0) sees only (1,1,1)'s contribution through the
    # dense oracle rather than a hand-derived value.
    kernel = np.random.default_rng(5).standard_normal((3, 3, 3, 1, 1))
    g = sp.SparseVoxelGrid((6, 6, 6), [[1, 1, 1], [2, 2, 2]], [[1.0], [10.0]])
    out = sp.strided_conv(g, kernel)
    ref = dense_conv3d(g.densify(), kernel, np.zeros(1), stride=2)
    for row, s in enumerate(out.sites):
        assert np.allclose(out.values_np()[row], ref[s[0], s[1], s[2]], atol=1e-12)


def test_site_norm_statistics():
    rng = np.random.default_rng(6)
    g = random_grid(rng, c=5, density=0.5)
    gamma = Tensor(np.ones(5))
    beta = Tensor(np.zeros(5))
    out = sp.site_norm(g, gamma, beta).values_np()
    assert np.abs(out.mean(axis=0)).max() < 1e-9
    assert np.abs(out.std(axis=0) - 1.0).max() < 1e-3
    out2 = sp.site_norm(g, Tensor(2.0 * np.ones(5)), Tensor(np.full(5, 7.0))).values_np()
    assert np.allclose(out2, 2.0 * out + 7.0, atol=1e-9)


def test_resnet_block_zero_convs_pass_through():
    rng = np.random.default_rng(7)
    g = random_grid(rng, c=4)
    block = sp.ResNetBlock(np.random.default_rng(0), 4, "t")
    for k in (block.k1, block.b1, block.k2, block.b2):
        k.data[...] = 0.0
    out = block(g)
    assert np.allclose(out.values_np(), g.values_np(), atol=1e-9)
    assert np.array_equal(out.sites, g.sites)


def test_conv_kernel_gradcheck():
    rng = np.random.default_rng(8)
    g = random_grid(rng, max_dim=6, c=2, density=0.4)
    kernel = rng.standard_normal((3, 3, 3, 2, 3))
    proj = rng.standard_normal((g.n_active, 3))

    def loss_np(kflat):
        out = sp.submanifold_conv(g, kflat.reshape(3, 3, 3, 2, 3))
        return float((out.values_np() * proj).sum())

    kt = Tensor(kernel, requires_grad=True)
    out = sp.submanifold_conv(g, kt)
    (out.values * Tensor(proj)).sum().backward()
    fd = fd_gradient(loss_np, kernel.ravel()).reshape(kernel.shape)
    assert rel_err(kt.grad, fd, floor=1e-6) < 1e-4


def test_site_values_gradcheck():
    rng = np.random.default_rng(9)
    g = random_grid(rng, max_dim=6, c=2, density=0.4)
    kernel = rng.standard_normal((3, 3, 3, 2, 2))
    base = g.values_np().copy()
    proj = rng.standard_normal((g.n_active, 2))

    def loss_np(v):
        gv = sp.SparseVoxelGrid(g.dims, g.sites, v.reshape(base.shape))
        out = sp.strided_conv(gv, kernel)
        return float((out.values_np() * proj[:out.n_active]).sum())

    vt = Tensor(base, requires_grad=True)
    out = sp.strided_conv(sp.SparseVoxelGrid(g.dims, g.sites, vt), kernel)
    (out.values * Tensor(proj[:out.n_active])).sum().backward()
    fd = fd_gradient(loss_np, base.ravel()).reshape(base.shape)
    assert rel_err(vt.grad, fd, floor=1e-6) < 1e-4


def test_backbone_shapes_and_widths():
    bb = sp.PyramidBackbone(in_channels=5, base_channels=4, seed=0)
    assert bb.level_widths() == [4, 8, 16, 32]
    assert bb.out_channels == 64

    rng = np.random.default_rng(10)
    sites = np.unique(rng.integers(0, (24, 24, 16), size=(40, 3)), axis=0)
    g = sp.SparseVoxelGrid((24, 24, 16), sites, rng.standard_normal((len(sites), 5)))
    tokens, (lt, wt) = bb.tokens(g)
    assert (lt, wt) == (2, 2)
    assert tokens.data.shape == (4, 64)


def test_backbone_rejects_tall_grids():
    bb = sp.PyramidBackbone(in_channels=2, base_channels=2, seed=0)
    g = sp.SparseVoxelGrid((8, 8, 17), [[0, 0, 0]], np.ones((1, 2)))
    with pytest.raises(ConfigError):
        bb(g)


def test_backbone_deterministic():
    rng = np.random.default_rng(11)
    sites = np.unique(rng.integers(0, 8, size=(20, 3)), axis=0)
    vals = rng.standard_normal((len(sites), 3))
    g = sp.SparseVoxelGrid((8, 8, 8), sites, vals)
    t1, _ = sp.PyramidBackbone(3, base_channels=2, seed=42).tokens(g)
    t2, _ = sp.PyramidBackbone(3, base_channels=2, seed=42).tokens(g)
    assert np.array_equal(t1.data, t2.data)
