import numpy as np
import pytest

from biofields import checkpoint as ckpt
from biofields.bionet import BioNet, BioNetConfig
from biofields.errors import ConfigError
from biofields.sparse3d import SparseVoxelGrid

from oracles import fd_gradient, rel_err

TINY = BioNetConfig(feature_dim=2, include_offsets=False, voxel_dims=(32, 32, 16),
                    base_channels=2, d_model=8, n_heads=2, ffn_dim=16,
                    n_encoders=1, head_hidden=(8, 4), dropout=0.0)


def tiny_model(seed=0):
    return BioNet(TINY, seed=seed)


def random_tokens(model, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((model.config.n_tokens, model.backbone.out_channels))


def test_config_validation():
    with pytest.raises(ConfigError):
        BioNetConfig(d_model=10, n_heads=4)
    with pytest.raises(ConfigError):
        BioNetConfig(voxel_dims=(64, 64, 32))
    with pytest.raises(ConfigError):
        BioNetConfig(dropout=1.5)


def test_token_count_arithmetic():
    assert BioNetConfig(voxel_dims=(64, 64, 16)).n_tokens == 16
    assert BioNetConfig(voxel_dims=(16, 16, 16)).n_tokens == 1
    assert BioNetConfig(voxel_dims=(48, 80, 8)).token_map == (3, 5)


def test_prediction_is_positive_scalar():
    model = tiny_model()
    out = model.forward_tokens(random_tokens(model))
    assert out.data.shape == (1,)
    assert out.data[0] > 0.0


def test_permutation_invariance():
    model = tiny_model(seed=3)
    tokens = random_tokens(model, seed=1)
    m1 = model.forward_tokens(tokens).data[0]
    rng = np.random.default_rng(2)
    for _ in range(5):
        perm = rng.permutation(model.config.n_tokens)
        model.pos_embed.data[1:] = model.pos_embed.data[1:][perm]
        m2 = model.forward_tokens(tokens[perm]).data[0]
        assert abs(m1 - m2) < 1e-9
        # undo for the next round
        model.pos_embed.data[1:] = model.pos_embed.data[1:][np.argsort(perm)]


def test_zeroed_head_returns_softplus_of_bias():
    model = tiny_model()
    for w, b in model.head:
        w.data[...] = 0.0
        b.data[...] = 0.0
    model.head[-1][1].data[...] = 1.3
    out = model.forward_tokens(random_tokens(model, seed=5)).data[0]
    assert out == pytest.approx(np.log1p(np.exp(1.3)), abs=1e-12)


def test_readout_gradcheck():
    model = tiny_model(seed=7)
    tokens = random_tokens(model, seed=8)
    loss = model.forward_tokens(tokens).sum()
    loss.backward()
    enc = model.encoders[0]
    for param in (enc.wq, enc.wv, enc.w1, enc.ln1[0], model.proj_w,
                  model.summary_token, model.pos_embed, model.head[-1][0]):
        base = param.data.copy()

        def f(p):
            param.data = p.reshape(base.shape)
            return float(model.forward_tokens(tokens).data[0])

        fd = fd_gradient(f, base.ravel()).reshape(base.shape)
        param.data = base
        assert rel_err(param.grad, fd, floor=1e-6) < 1e-4, param.name


def test_full_forward_from_grid():
    cfg = BioNetConfig(feature_dim=2, include_offsets=False, voxel_dims=(16, 16, 16),
                       base_channels=2, d_model=8, n_heads=2, ffn_dim=16,
                       n_encoders=1, head_hidden=(8, 4), dropout=0.0)
    model = BioNet(cfg, seed=0)
    rng = np.random.default_rng(0)
    sites = np.unique(rng.integers(0, 16, size=(30, 3)), axis=0)
    grid = SparseVoxelGrid((16, 16, 16), sites, rng.standard_normal((len(sites), 2)))
    out = model(grid)
    assert out.data.shape == (1,) and out.data[0] > 0

    wrong = SparseVoxelGrid((32, 32, 16), sites, rng.standard_normal((len(sites), 2)))
    with pytest.raises(ConfigError, match="token map"):
        model(wrong)
    with pytest.raises(ConfigError, match="tokens"):
        model.forward_tokens(np.zeros((3, model.backbone.out_channels)))


def test_dropout_only_with_rng():
    cfg = BioNetConfig(feature_dim=2, include_offsets=False, voxel_dims=(32, 32, 16),
                       base_channels=2, d_model=8, n_heads=2, ffn_dim=16,
                       n_encoders=1, head_hidden=(8, 4), dropout=0.5)
    model = BioNet(cfg, seed=1)
    tokens = random_tokens(model, seed=2)
    a = model.forward_tokens(tokens).data[0]
    b = model.forward_tokens(tokens).data[0]
    assert a == b
    c = model.forward_tokens(tokens, rng=np.random.default_rng(0)).data[0]
    d = model.forward_tokens(tokens, rng=np.random.default_rng(0)).data[0]
    e = model.forward_tokens(tokens, rng=np.random.default_rng(9)).data[0]
    assert c == d
    assert c != e


def test_state_dict_round_trip(tmp_path):
    model = tiny_model(seed=4)
    tokens = random_tokens(model, seed=4)
    ref = model.forward_tokens(tokens).data[0]
    names = [p.name for p in model.params()]
    assert len(names) == len(set(names))

    path = tmp_path / "bionet.nfbk"
    ckpt.save_checkpoint(path, model.state_dict())
    other = tiny_model(seed=99)
    assert other.forward_tokens(tokens).data[0] != pytest.approx(ref)
    other.load_state_dict(ckpt.load_checkpoint(path))
    assert other.forward_tokens(tokens).data[0] == pytest.approx(ref, abs=0)
