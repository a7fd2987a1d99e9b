import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from qscl.autodiff import CheckpointError, ShapeError, backward, ops
from qscl.encoders import (ConfigError, EncoderConfig, Network, base_encode, flatten, heads, param_shapes,
                           project, staa_encode)
from qscl.losses import bidirectional_loss


def small(**kw):
    base = dict(input_dim=16, channels=8, pooled_len=8, heads=2, proj_dim=8, proj_hidden=16,
                n_floors=3, n_buildings=2)
    base.update(kw)
    return EncoderConfig(**base)


@pytest.mark.parametrize("b,i", [(1, 16), (3, 16), (1, 52), (3, 52)])
def test_base_encoder_shape(b, i):
    cfg = small(input_dim=i)
    net = Network(cfg)
    out = base_encode(np.random.default_rng(0).uniform(size=(b, i)), net.params, cfg)
    assert out.shape == (b, cfg.channels, cfg.pooled_len)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_staa_preserves_shape(d):
    cfg = small(dilation=d)
    net = Network(cfg)
    x = np.random.default_rng(0).normal(size=(3, 8, 8))
    out, trace = staa_encode(x, net.params, cfg, trace=True)
    assert out.shape == (3, 8, 8)
    assert trace.attention_weights.shape == (3, 2, 8, 8)
    assert trace.gate.shape == (3, 1)
    np.testing.assert_allclose(trace.attention_weights.data.sum(-1), 1.0, atol=1e-12)


def test_gate_is_scalar_sigmoid_of_mean_summary():
    cfg = small()
    net = Network(cfg)
    net.params["staa.adapt.weight"].data[:] = 0.0
    net.params["staa.adapt.bias"].data[:] = 100.0
    x = np.random.default_rng(1).normal(size=(2, 8, 8))
    _, trace = staa_encode(x, net.params, cfg, trace=True)
    np.testing.assert_allclose(trace.gate.data, 1.0)


def test_zero_gate_reduces_to_normalized_conv():
    cfg = small()
    net = Network(cfg)
    net.params["staa.adapt.weight"].data[:] = 0.0
    net.params["staa.adapt.bias"].data[:] = -1e3
    x = np.random.default_rng(2).normal(size=(2, 8, 8))
    out, trace = staa_encode(x, net.params, cfg, trace=True)
    tokens = trace.conv.data.transpose(0, 2, 1)
    mu = tokens.mean(-1, keepdims=True)
    ref = (tokens - mu) / np.sqrt(tokens.var(-1, keepdims=True) + cfg.ln_eps)
    np.testing.assert_allclose(out.data, ref.transpose(0, 2, 1), atol=1e-10)


def test_projection_unit_norm():
    cfg = small()
    net = Network(cfg)
    z = net.embed(np.random.default_rng(0).uniform(size=(5, 16)))
    np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-12)


def test_heads_shapes_for_both_inputs():
    for head_input in ("features", "projection"):
        net = Network(small(head_input=head_input))
        pos, fl, bl = net.predict(np.random.default_rng(0).uniform(size=(4, 16)))
        assert pos.shape == (4, 2) and fl.shape == (4, 3) and bl.shape == (4, 2)


def test_config_validation():
    with pytest.raises(ConfigError):
        small(channels=6, heads=4)
    with pytest.raises(ConfigError):
        small(head_input="logits")
    with pytest.raises(ConfigError):
        EncoderConfig.from_dict({"input_dim": 4, "colour": 1})
    assert EncoderConfig.from_dict(small().to_dict()) == small()


def test_input_validation():
    net = Network(small())
    with pytest.raises(ShapeError):
        net.encode(np.zeros((2, 15)))
    with pytest.raises(ValueError):
        net.encode(np.full((2, 16), np.nan))


def test_gradient_reaches_every_parameter():
    cfg = small()
    net = Network(cfg)
    rng = np.random.default_rng(3)
    x = rng.uniform(0.1, 1, (4, 16))
    _, _, l = bidirectional_loss(net.embed(x), net.embed(x + rng.normal(0, 0.05, x.shape)), 0.1)
    pos, fl, bl = net.predict(x)
    total = ops.add(l, ops.add(ops.sum(ops.mul(pos, pos)), ops.add(ops.sum(fl), ops.sum(ops.mul(bl, bl)))))
    params = list(net.params.values())
    backward(total, params)
    for name, p in net.params.items():
        assert np.any(p.grad != 0), name


def test_staa_gradient_check():
    cfg = small()
    net = Network(cfg)
    x = np.random.default_rng(4).normal(size=(2, 8, 8))
    w = np.random.default_rng(5).normal(size=(2, 8, 8))
    loss = lambda: ops.sum(ops.mul(staa_encode(x, net.params, cfg), w))  # noqa: E731
    backward(loss(), list(net.params.values()))
    for name in [n for n in net.params if n.startswith("staa.")]:
        p = net.params[name]
        num = numeric_grad(lambda: loss().item(), p.data)
        assert rel_error(p.grad, num) < 1e-4, name


def test_save_load_round_trip(tmp_path):
    net = Network(small(seed=3))
    net.save(tmp_path / "a.ckpt", {"note": "x"})
    loaded, meta = Network.load(tmp_path / "a.ckpt")
    assert meta["note"] == "x"
    x = np.random.default_rng(0).uniform(size=(2, 16))
    np.testing.assert_array_equal(loaded.embed(x).data, net.embed(x).data)
    loaded.save(tmp_path / "b.ckpt", {"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_load_rejects_mismatched_shapes():
    a = Network(small())
    b = Network(small(channels=4))
    with pytest.raises(CheckpointError):
        a.load_state_dict(b.state_dict())


def test_partial_load_by_prefix():
    a, b = Network(small(seed=1)), Network(small(seed=2))
    a.load_state_dict(b.state_dict(), prefixes=("conv1.",))
    np.testing.assert_array_equal(a.params["conv1.weight"].data, b.params["conv1.weight"].data)
    assert not np.array_equal(a.params["conv2.weight"].data, b.params["conv2.weight"].data)


def test_init_is_seeded_and_bounded():
    cfg = small()
    a, b = Network(cfg), Network(cfg)
    for name, shape in param_shapes(cfg).items():
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
        if name.endswith(".weight"):
            assert np.abs(a.params[name].data).max() <= 1 / np.sqrt(np.prod(shape[1:]))


def test_flatten_and_heads_helpers():
    cfg = small()
    net = Network(cfg)
    feats = net.encode(np.random.default_rng(0).uniform(size=(2, 16)))
    assert flatten(feats).shape == (2, 64)
    pos, _, _ = heads(feats, net.params)
    assert pos.shape == (2, 2)
    assert project(feats, net.params).shape == (2, 8)
