import json

import numpy as np
import pytest

from udehaze import losses
from udehaze.nets import (ModelConfig, UDehazeNet, decode_checkpoint, depth_from_logits,
                          encode_checkpoint, load_checkpoint, save_checkpoint)
from udehaze.optim import AdamW
from udehaze.tensor import Tensor


@pytest.fixture(scope="module")
def model():
    return UDehazeNet(ModelConfig(base_channels=4, seed=3))


def batch(rng, n=1, size=32):
    return rng.uniform(0.05, 0.95, size=(n, 3, size, size))


def zero_anet_output(net):
    net.anet.out.weight.data[:] = 0.0
    net.anet.out.bias.data[:] = 0.0


# DepthNet

def test_depth_shape_and_bounds(model, rng):
    depth = model.depthnet(Tensor(batch(rng, 2, 16)))
    assert depth.shape == (2, 1, 16, 16)
    assert depth.data.min() >= 0.1 and depth.data.max() <= 10.0


def test_head_midpoint():
    assert depth_from_logits(Tensor(0.0), 0.1, 10.0).item() == pytest.approx(5.05, abs=1e-15)


def test_depth_bounds_hold_for_extreme_logits():
    d = depth_from_logits(Tensor([-800.0, 800.0]), 0.1, 10.0).data
    assert d.tolist() == [0.1, 10.0]


def test_initial_depth_is_shallow(model, rng):
    depth = model.depthnet(Tensor(batch(rng))).data
    assert abs(np.median(depth) - model.cfg.depth_init) < 0.5


def test_depth_is_deterministic(model, rng):
    x = batch(rng)
    np.testing.assert_array_equal(model.depthnet(Tensor(x)).data, model.depthnet(Tensor(x.copy())).data)


def test_indivisible_size_is_rejected(model, rng):
    with pytest.raises(ValueError, match="divisible by 8"):
        model(rng.uniform(size=(1, 3, 36, 40)))


def test_wrong_channel_count(model):
    with pytest.raises(ValueError, match="N, 3, H, W"):
        model(np.zeros((1, 4, 32, 32)))


# ANet

def test_zero_residual_passes_prior_through(rng):
    net = UDehazeNet(ModelConfig(base_channels=2))
    zero_anet_output(net)
    a_cl = np.array([[0.2, 0.5, 1.3]])
    a, delta = net.atmospheric_light(Tensor(batch(rng)), a_cl)
    assert delta.data.tolist() == [[0.0, 0.0, 0.0]]
    assert a.data.tolist() == [[0.3, 0.5, 1.0]]


def test_lower_clamp_with_saturated_residual(rng):
    net = UDehazeNet(ModelConfig(base_channels=2))
    net.anet.out.weight.data[:] = 0.0
    net.anet.out.bias.data[:] = -50.0
    a, delta = net.atmospheric_light(Tensor(batch(rng)), np.full((1, 3), 0.2))
    np.testing.assert_allclose(delta.data, -1.0)
    np.testing.assert_array_equal(a.data, 0.3)


def test_residual_arithmetic(rng):
    net = UDehazeNet(ModelConfig(base_channels=2))
    net.anet.out.weight.data[:] = 0.0
    net.anet.out.bias.data[:] = np.arctanh(0.5)
    a, _ = net.atmospheric_light(Tensor(batch(rng)), np.full((1, 3), 0.6))
    np.testing.assert_allclose(a.data, 0.675, atol=1e-15)


def test_no_gradient_into_classical_prior(rng):
    net = UDehazeNet(ModelConfig(base_channels=2))
    out = net(batch(rng))
    assert isinstance(out.A_cl, np.ndarray)


# RefinerNet

def test_fresh_model_output_equals_raw_inversion(model, rng):
    out = model(batch(rng, 2))
    np.testing.assert_array_equal(out.J.data, out.J_raw.data)
    assert not model.refiner.conv3.weight.data.any() and not model.refiner.conv3.bias.data.any()


def test_final_bias_shifts_constant_input():
    net = UDehazeNet(ModelConfig(base_channels=2))
    b = np.array([0.3, -0.2, 2.0])
    net.refiner.conv3.bias.data[:] = b
    j_raw = Tensor(np.full((1, 3, 8, 8), 0.5))
    j, correction = net.refine(j_raw)
    np.testing.assert_allclose(correction.data, np.tanh(b)[None, :, None, None] * np.ones((1, 3, 8, 8)))
    expected = np.clip(0.5 + np.tanh(b), 0, 1)
    np.testing.assert_allclose(j.data[0, :, 0, 0], expected, atol=1e-15)


@pytest.mark.parametrize("scale, strict", [(0.5, True), (5.0, False)])
def test_correction_is_bounded(rng, scale, strict):
    net = UDehazeNet(ModelConfig(base_channels=2))
    net.refiner.conv3.weight.data = rng.standard_normal(net.refiner.conv3.weight.shape) * scale
    j, correction = net.refine(Tensor(batch(rng)))
    peak = np.abs(correction.data).max()
    # tanh only rounds to exactly 1.0 in float64 once its argument passes ~19
    assert peak < 1 if strict else peak <= 1
    assert j.data.min() >= 0 and j.data.max() <= 1


# full forward pass

def test_forward_shapes_and_ranges(model, rng):
    out = model(batch(rng))
    assert out.J.shape == out.J_raw.shape == out.t.shape == (1, 3, 32, 32)
    assert out.D.shape == (1, 1, 32, 32)
    assert out.A.shape == out.A_cl.shape == (1, 3)
    assert out.D.data.min() >= 0.1 and out.D.data.max() <= 10
    assert out.t.data.min() > 0 and out.t.data.max() <= 1
    assert out.A.data.min() >= 0.3 and out.A.data.max() <= 1
    for img in (out.J, out.J_raw):
        assert img.data.min() >= 0 and img.data.max() <= 1


def test_constant_input_at_prior_is_fixed_point():
    net = UDehazeNet(ModelConfig(base_channels=2))
    zero_anet_output(net)
    img = np.broadcast_to(np.array([0.4, 0.55, 0.7])[None, :, None, None], (1, 3, 32, 32)).copy()
    out = net(img)
    np.testing.assert_allclose(out.A_cl, [[0.4, 0.55, 0.7]], atol=1e-15)
    np.testing.assert_allclose(out.J_raw.data, img, atol=1e-12)


def test_overrides_replace_predictions(model, rng):
    x = batch(rng)
    t = np.full(x.shape, 0.5)
    a = np.array([[0.5, 0.6, 0.7]])
    out = model(x, t_override=t, atmos_override=a)
    expected = np.clip((x - a[:, :, None, None] * 0.5) / 0.5, 0, 1)
    np.testing.assert_allclose(out.J_raw.data, expected, atol=1e-14)


def test_parameter_count_at_full_scale():
    n = UDehazeNet(ModelConfig(base_channels=32)).num_parameters()
    assert abs(n - 0.9e6) / 0.9e6 < 0.05


def test_gradient_reaches_every_group(rng):
    net = UDehazeNet(ModelConfig(base_channels=4, seed=1))
    opt = AdamW(net.parameters())
    x = batch(rng, 2)
    ref = np.clip(x * 1.2 - 0.1, 0, 1)

    def step():
        out = net(x)
        losses.compute_losses(out, x, ref, net.beta).total_tensor.backward()

    step()
    # the zero final layer blocks the hidden refiner layers at initialization
    assert not net.refiner.conv1.weight.grad.any()
    assert net.refiner.conv3.weight.grad.any()
    opt.step()
    opt.zero_grad()
    step()
    for name, p in net.named_parameters():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name


# checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    net = UDehazeNet(ModelConfig(base_channels=2, seed=9))
    for p in net.parameters():
        p.data = rng.standard_normal(p.shape)
    save_checkpoint(net, tmp_path / "m.ckpt", {"epoch": 3, "val_psnr": 21.5})
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"epoch": 3, "val_psnr": 21.5}
    assert back.cfg == net.cfg
    for (n1, p1), (n2, p2) in zip(net.named_parameters(), back.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    assert encode_checkpoint(back, meta) == (tmp_path / "m.ckpt").read_bytes()
    sidecar = json.loads((tmp_path / "m.ckpt.json").read_text())
    assert sidecar["val_psnr"] == 21.5 and sidecar["model"]["base_channels"] == 2
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.ckpt", "m.ckpt.json"]


def test_checkpoint_layout_header():
    buf = encode_checkpoint(UDehazeNet(ModelConfig(base_channels=2)))
    assert buf[:5] == b"UDHZ1"
    clen = int.from_bytes(buf[5:9], "little")
    header = json.loads(buf[9:9 + clen])
    assert header["model"]["base_channels"] == 2


def test_checkpoint_errors():
    buf = encode_checkpoint(UDehazeNet(ModelConfig(base_channels=2)))
    with pytest.raises(ValueError, match="magic"):
        decode_checkpoint(b"NOPE" + buf[4:])
    with pytest.raises(ValueError, match="truncated"):
        decode_checkpoint(buf[:-100])


def test_state_dict_mismatch():
    net = UDehazeNet(ModelConfig(base_channels=2))
    state = net.state_dict()
    state.pop("beta")
    with pytest.raises(ValueError, match="beta"):
        net.load_state_dict(state)
    other = UDehazeNet(ModelConfig(base_channels=4)).state_dict()
    with pytest.raises(ValueError, match="shape"):
        net.load_state_dict(other)


def test_config_dict_round_trip():
    cfg = ModelConfig(base_channels=8, seed=5)
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
