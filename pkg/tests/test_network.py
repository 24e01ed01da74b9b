import numpy as np
import pytest

from rganet import attention as attn
from rganet import checkpoint, network as net, ops
from rganet.optim import OptimizerState
from rganet.params import ParamStore, init_from_spec
from rganet.tensor import Tensor

RNG = np.random.default_rng(11)

# Hand audit of the toy configuration (C=16, L=3, one block everywhere, 4x4
# geometry, FFN ratio 2). Per-component sizes for c channels, h heads:
#   attention  4c^2 + 4c + 49h        FFN   6c^2 + 45c     LN  2c
#   spectral   2c^2 + 2c              DHA   1 + 2*attention + spectral
#   encoder    2 LN + DHA + FFN       ADA   3 LN + 2*attention + FFN
#   per level  encoder + down(18c^2+2c) + up(8c^2+c) + gate(c^2+c + 2 LN + 2 ADA) + ADA
#   plus embed 448, head 435, bottleneck ADA at 128 channels.
TOY_PARAM_COUNT = 725630


def small_cfg(**kw):
    base = dict(levels=2, base_channels=8, blocks_per_level=[1, 1], decoder_blocks_per_level=[1, 1],
                bottleneck_blocks=1, window=(4, 4), block=(4, 4), grid=(2, 2), head_dim=8)
    base.update(kw)
    return net.ModelConfig(**base)


def test_toy_param_count():
    assert net.param_count(net.toy_config()) == TOY_PARAM_COUNT
    assert net.init_params(net.toy_config(), 0).count() == TOY_PARAM_COUNT


def test_config_validation():
    with pytest.raises(net.ConfigError):
        net.ModelConfig(levels=0).validate()
    with pytest.raises(net.ConfigError):
        net.ModelConfig(base_channels=20).validate()
    cfg = net.toy_config()
    assert net.ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert [cfg.channels(level) for level in range(4)] == [16, 32, 64, 128]


def test_init_is_deterministic_and_ordered():
    a = net.init_params(small_cfg(), 3)
    b = net.init_params(small_cfg(), 3)
    assert a.names() == sorted(a.names())
    assert all(np.array_equal(x.data, y.data) for (_, x), (_, y) in zip(a.items(), b.items()))
    assert not a["head.weight"].data.any()
    assert np.all(np.abs(a["embed.weight"].data) <= 0.04)


def test_identity_at_init_is_bit_exact():
    cfg = small_cfg()
    params = net.init_params(cfg, 0)
    x = RNG.random((2, 3, 16, 20)).astype(np.float32)
    assert np.array_equal(net.rganet_forward(x, cfg, params).data, x)


def test_embed_matches_conv_oracle():
    from oracles import conv2d_naive
    p = init_from_spec({"weight": ((4, 3, 3, 3), "trunc"), "bias": ((4,), "zeros")}, 1, np.float64)
    x = RNG.random((1, 3, 6, 5))
    np.testing.assert_allclose(net.embed(x, p.scope("")).data,
                               conv2d_naive(x, p["weight"].data, p["bias"].data, 1, 1), atol=1e-12)


def test_down_and_up_sampling_dims():
    p = init_from_spec({"weight": ((8, 4, 3, 3), "trunc"), "bias": ((8,), "zeros")}, 0, np.float64)
    assert net.downsample(RNG.random((1, 4, 9, 7)), p.scope("")).shape == (1, 8, 5, 4)
    q = init_from_spec({"weight": ((8, 4, 2, 2), "trunc"), "bias": ((4,), "zeros")}, 0, np.float64)
    assert net.upsample(RNG.random((1, 8, 5, 4)), q.scope("")).shape == (1, 4, 10, 8)


# ---------------------------------------------------------------- cross gating

def _gate_params(cfg, c, seed=0):
    p = init_from_spec(net.cross_gate_spec(cfg, c, c, 1), seed, np.float64)
    rng = np.random.default_rng(seed)
    for _, t in p.items():
        t.data[...] = rng.standard_normal(t.shape) * 0.3
    return p


@pytest.mark.parametrize("beta,factor", [(40.0, 2.0), (-800.0, 1.0)])
def test_cross_gate_forced_gates(beta, factor):
    cfg = small_cfg()
    c = 8
    p = _gate_params(cfg, c)
    for side in ("x", "y"):
        p[f"norm_{side}.weight"].data[:] = 0
        p[f"norm_{side}.bias"].data[:] = beta
        for name, t in p.items():
            if name.startswith(f"gate_{side}.") and (name.endswith("proj.weight") or name.endswith("proj.bias")
                                                      or ".ffn." in name):
                t.data[:] = 0
    x, y = RNG.standard_normal((1, c, 8, 8)), RNG.standard_normal((1, c, 8, 8))
    y_hat = net.align(y, p.scope(""), (8, 8)).data
    out = net.cross_gate(x, y, p.scope(""), cfg, 1).data
    np.testing.assert_allclose(out, factor * (x + y_hat), rtol=1e-12, atol=1e-12)


def test_cross_gate_manual_composition():
    cfg = small_cfg()
    c = 8
    p = _gate_params(cfg, c, seed=4)
    x, y = RNG.standard_normal((1, c, 8, 8)), RNG.standard_normal((1, c, 8, 8))
    y_hat = ops.conv2d(y, p["align.weight"], p["align.bias"]).data
    ln_x = attn.norm(x, p.scope("norm_x")).data
    ln_y = attn.norm(y_hat, p.scope("norm_y")).data
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    g_x = sig(attn.ada_forward(ln_x, p.scope("gate_x"), cfg.block, cfg.grid, 1).data)
    g_y = sig(attn.ada_forward(ln_y, p.scope("gate_y"), cfg.block, cfg.grid, 1).data)
    expected = x * g_y + y_hat * g_x + x + y_hat
    np.testing.assert_allclose(net.cross_gate(x, y, p.scope(""), cfg, 1).data, expected, atol=1e-6)


def test_cross_gate_upsampling_align():
    cfg = small_cfg()
    p = init_from_spec(net.cross_gate_spec(cfg, 8, 16, 1, upsample=True), 0, np.float64)
    x, y = RNG.standard_normal((1, 8, 7, 9)), RNG.standard_normal((1, 16, 4, 5))
    assert net.align(y, p.scope(""), (7, 9)).shape == (1, 8, 7, 9)
    assert net.cross_gate(x, y, p.scope(""), cfg, 1).shape == x.shape
    with pytest.raises(ops.ShapeError):
        net.align(RNG.standard_normal((1, 16, 2, 2)), p.scope(""), (7, 9))


# ---------------------------------------------------------------- ablations

def test_ablation_structure():
    base = net.toy_config()
    names = set(net.model_spec(base))
    no_dha = set(net.model_spec(net.make_ablation_variant(base, "no_dha")))
    no_ada = set(net.model_spec(net.make_ablation_variant(base, "no_ada")))
    no_cg = set(net.model_spec(net.make_ablation_variant(base, "no_crossgating")))
    assert any(".dha." in n for n in names) and not any(".dha." in n for n in no_dha)
    assert any("norm3" in n for n in names) and not any("norm3" in n for n in no_ada)
    assert not any(".cg." in n for n in no_cg) and any(".fuse." in n for n in no_cg)
    with pytest.raises(ValueError):
        net.make_ablation_variant(base, "no_everything")


@pytest.mark.parametrize("case", net.ABLATIONS)
def test_ablation_forward_dims(case):
    cfg = net.make_ablation_variant(net.toy_config(), case)
    params = net.init_params(cfg, 1)
    for _, t in params.items():
        if not t.data.any() and t.ndim > 1:
            t.data[...] = 0.01
    x = RNG.random((1, 3, 64, 64)).astype(np.float32)
    out = net.rganet_forward(x, cfg, params).data
    assert out.shape == x.shape and np.all((out >= 0) & (out <= 1))


def test_forward_rejects_bad_input():
    cfg = small_cfg()
    params = net.init_params(cfg, 0)
    with pytest.raises(ops.ShapeError):
        net.rganet_forward(np.zeros((1, 4, 16, 16)), cfg, params)
    with pytest.raises(net.ConfigError):
        net.rganet_forward(np.zeros((1, 3, 2, 16)), cfg, params)


@pytest.mark.parametrize("hw", [(13, 17), (16, 16), (9, 31)])
def test_forward_odd_sizes(hw):
    cfg = small_cfg()
    params = net.init_params(cfg, 2)
    params["head.weight"].data[...] = 0.01
    out = net.rganet_forward(RNG.random((1, 3) + hw), cfg, params)
    assert out.shape == (1, 3) + hw


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = small_cfg()
    params = net.init_params(cfg, 5)
    params["head.weight"].data[...] = RNG.standard_normal(params["head.weight"].shape).astype(np.float32) * 0.1
    opt = OptimizerState.for_params(params)
    opt.step = 17
    opt.m["embed.bias"][:] = 0.5
    path = tmp_path / "m.rgan"
    checkpoint.save_checkpoint(path, cfg, params, opt)
    cfg2, params2, opt2, meta = checkpoint.load_checkpoint(path)
    assert cfg2 == cfg and params2.names() == params.names()
    assert opt2.step == 17 and np.array_equal(opt2.m["embed.bias"], opt.m["embed.bias"])
    x = RNG.random((1, 3, 16, 16)).astype(np.float32)
    assert np.array_equal(net.rganet_forward(x, cfg, params).data, net.rganet_forward(x, cfg2, params2).data)


def test_checkpoint_layout(tmp_path):
    params = ParamStore()
    params.add("w", Tensor(np.arange(6, dtype=np.float32).reshape(2, 3)))
    path = tmp_path / "t.rgan"
    checkpoint.save_checkpoint(path, small_cfg(), params)
    buf = path.read_bytes()
    assert buf[:4] == b"RGAN"
    assert int.from_bytes(buf[4:8], "little") == 1
    jlen = int.from_bytes(buf[8:12], "little")
    body = buf[12 + jlen:]
    assert int.from_bytes(body[:4], "little") == 1
    assert body[4:6] == (1).to_bytes(2, "little") and body[6:7] == b"w" and body[7] == 2
    assert np.frombuffer(body[16:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "c.rgan"
    checkpoint.save_checkpoint(path, small_cfg(), net.init_params(small_cfg(), 0))
    good = path.read_bytes()
    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(checkpoint.CheckpointFormatError) as err:
        checkpoint.load_checkpoint(path)
    assert err.value.offset == 0
    path.write_bytes(good[:-3])
    with pytest.raises(checkpoint.CheckpointFormatError) as err:
        checkpoint.load_checkpoint(path)
    assert err.value.offset > 0


def test_checkpoint_config_block_is_model_config(tmp_path):
    import json
    cfg = small_cfg()
    path = tmp_path / "m.rgan"
    checkpoint.save_checkpoint(path, cfg, net.init_params(cfg, 0))
    buf = path.read_bytes()
    jlen = int.from_bytes(buf[8:12], "little")
    assert net.ModelConfig.from_dict(json.loads(buf[12:12 + jlen])) == cfg


def test_ablations_are_smaller():
    cfg = net.toy_config()
    full = net.param_count(cfg)
    for case in net.ABLATIONS:
        assert net.param_count(net.make_ablation_variant(cfg, case)) < full, case
