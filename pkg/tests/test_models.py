import math

import numpy as np
import pytest

from coopsteer.checkpoint import MAGIC, load_checkpoint, params_digest, read_header, save_checkpoint
from coopsteer.errors import ConfigurationError, FormatError
from coopsteer.gradcheck import check_param_grads
from coopsteer.layers import lstm_sequence
from coopsteer.models import (
    CONV_STACK,
    ModelConfig,
    SteeringModel,
    conv_output_shapes,
    count_params,
    feature_length,
    forward_baselineA,
    forward_baselineD,
    forward_baselineE,
    forward_coop,
)
from coopsteer.optim import AdamState, adam_step
from coopsteer.tensor import Tensor, backward, mse_loss, reshape

# pinned from the shape chain 480 -> 96 -> 32 -> 7 -> 7 -> 7 and 640 -> 160 -> 80 -> 20 -> 20 -> 10
FEATURES_480x640 = 7 * 10 * 128
COOP_PARAMS_480x640_X8 = 2_729_815


def _hand_param_count(n_feat, arch="coop", cin=3):
    total = 0
    for filters, (kh, kw), _ in CONV_STACK:
        total += kh * kw * cin * filters + filters
        cin = filters
    n_in = n_feat
    if arch == "coop":
        for units in (64, 64, 64):
            total += 4 * ((n_in + units) * units + units)
            n_in = units
    for units in (100, 50, 10, 1):
        total += n_in * units + units
        n_in = units
    return total


def _generic_point(model, rng):
    # nonzero biases keep ReLU pre-activations off the kink at exactly 0
    for name, p in model.parameters().items():
        if ".b" in name:
            p.data[...] = 0.1 * rng.standard_normal(p.shape)
    return model


def _zero(model):
    for p in model.parameters().values():
        p.data[...] = 0
    return model


def test_table_shape_chain():
    h, w = 480, 640
    for (filters, _, (sh, sw)), got in zip(CONV_STACK, conv_output_shapes(480, 640)):
        h, w = math.ceil(h / sh), math.ceil(w / sw)
        assert got == (h, w, filters)
    assert feature_length(480, 640) == FEATURES_480x640 == 8960


def test_full_size_coop_param_count_golden():
    model = SteeringModel(ModelConfig(arch="coop", x=8, input_h=480, input_w=640, dtype="float32"))
    assert model.lstm[0].input_size == 8960
    assert count_params(model) == COOP_PARAMS_480x640_X8 == _hand_param_count(8960)


@pytest.mark.parametrize("arch", ["baselineA", "baselineD"])
def test_baseline_param_count(arch):
    model = SteeringModel(ModelConfig(arch=arch, input_h=64, input_w=64))
    assert count_params(model) == _hand_param_count(128, arch)
    assert count_params(model) < count_params(SteeringModel(ModelConfig(arch="coop", input_h=64, input_w=64)))


def test_coop_sequence_length_is_2x(rng):
    model = SteeringModel(ModelConfig(x=8, input_h=16, input_w=16))
    seen = []
    orig = model.lstm[0]
    import coopsteer.models as models

    real = models.lstm_sequence

    def spy(seq, layer, return_sequence):
        if layer is orig:
            seen.append(seq.shape)
        return real(seq, layer, return_sequence)

    models.lstm_sequence = spy
    try:
        forward_coop(model, rng.uniform(-0.5, 0.5, (16, 16, 16, 3)))
    finally:
        models.lstm_sequence = real
    assert seen == [(1, 16, model.feature_size)]


@pytest.mark.parametrize("arch", ["coop", "baselineA", "baselineD", "baselineE"])
def test_zero_weights_output_zero(rng, arch):
    cfg = ModelConfig(arch=arch, x=2, input_h=16, input_w=16)
    model = _zero(SteeringModel(cfg))
    frames = rng.uniform(-0.5, 0.5, (3, cfg.frames_per_sample, 16, 16, 3))
    np.testing.assert_array_equal(model(frames).data, 0.0)


def test_frame_count_mismatch():
    model = SteeringModel(ModelConfig(x=2, input_h=16, input_w=16))
    with pytest.raises(ConfigurationError):
        forward_coop(model, np.zeros((3, 16, 16, 3)))
    with pytest.raises(ConfigurationError):
        forward_baselineA(model, np.zeros((1, 16, 16, 3)))


def test_time_distribution_matches_per_frame_loop(rng):
    model = SteeringModel(ModelConfig(x=3, input_h=16, input_w=16), seed=5)
    frames = rng.uniform(-0.5, 0.5, (6, 16, 16, 3))
    got = forward_coop(model, frames).item()
    feats = []
    for f in frames:
        h = Tensor(f)
        for layer in model.conv:
            h = layer(h)
        feats.append(h.data.reshape(-1))
    seq = Tensor(np.stack(feats))
    for i, layer in enumerate(model.lstm):
        seq = lstm_sequence(seq, layer, return_sequence=i < 2)
    out = seq
    for layer in model.fc:
        out = layer(out)
    assert got == pytest.approx(out.item(), abs=1e-12)


def test_baselineD_input_antisymmetry_and_composition(rng):
    d = SteeringModel(ModelConfig(arch="baselineD", input_h=16, input_w=16), seed=1)
    a_model = SteeringModel(ModelConfig(arch="baselineA", input_h=16, input_w=16), seed=1)
    a_model.load_state_dict(d.state_dict())
    fa, fb = rng.uniform(-0.5, 0.5, (2, 16, 16, 3))
    assert forward_baselineD(d, fa, fb).item() == pytest.approx(forward_baselineA(a_model, (fb - fa)[None]).item(), abs=1e-12)
    assert forward_baselineD(d, fa, fa).item() == pytest.approx(forward_baselineA(a_model, np.zeros((1, 16, 16, 3))).item(), abs=1e-12)
    assert forward_baselineD(d, fb, fa).item() == pytest.approx(forward_baselineA(a_model, (fa - fb)[None]).item(), abs=1e-12)
    with pytest.raises(ConfigurationError):
        forward_baselineD(d, fa, fb[:8])


def test_baselineE_channel_mask_reproduces_baselineA(rng):
    e = SteeringModel(ModelConfig(arch="baselineE", input_h=16, input_w=16), seed=2)
    assert e.conv[0].kernels.shape[2] == 6
    a_model = SteeringModel(ModelConfig(arch="baselineA", input_h=16, input_w=16), seed=2)
    state = a_model.state_dict()
    k = np.zeros((5, 5, 6, 24))
    k[:, :, :3] = state["conv1.kernels"]
    e.load_state_dict({**state, "conv1.kernels": k})
    f = rng.uniform(-0.5, 0.5, (16, 16, 3))
    assert forward_baselineE(e, f, f).item() == pytest.approx(forward_baselineA(a_model, f[None]).item(), abs=1e-12)


@pytest.mark.parametrize("arch", ["baselineA", "baselineE"])
def test_baseline_gradients_32x32(rng, arch):
    cfg = ModelConfig(arch=arch, x=1, input_h=32, input_w=32)
    model = _generic_point(SteeringModel(cfg, seed=3), rng)
    frames = rng.uniform(-0.5, 0.5, (2, cfg.frames_per_sample, 32, 32, 3))
    target = rng.standard_normal(2) * 0.3
    errs = check_param_grads(lambda: mse_loss(model(frames), target), list(model.parameters().values()), max_coords=15)
    assert max(errs.values()) < 1e-4


def test_unknown_arch():
    with pytest.raises(ConfigurationError):
        ModelConfig(arch="baselineB")


def test_checkpoint_roundtrip(tmp_path, rng):
    model = SteeringModel(ModelConfig(x=2, input_h=16, input_w=16, dtype="float32"), seed=9)
    opt = AdamState.create(model.parameters())
    frames = rng.uniform(-0.5, 0.5, (2, 4, 16, 16, 3)).astype(np.float32)
    backward(mse_loss(model(frames), np.zeros(2, dtype=np.float32)))
    adam_step(model.parameters(), opt)
    path = save_checkpoint(tmp_path / "model.ckpt", model, opt, meta={"note": "x"})
    assert path.read_bytes().startswith(MAGIC)
    header, _ = read_header(path)
    assert header["model"]["arch"] == "coop"
    ck = load_checkpoint(path)
    assert params_digest(ck.model) == params_digest(model)
    assert ck.optimizer.t == 1 and ck.meta == {"note": "x"}
    for k in opt.m:
        np.testing.assert_array_equal(ck.optimizer.m[k], opt.m[k])
        np.testing.assert_array_equal(ck.optimizer.v[k], opt.v[k])
    np.testing.assert_array_equal(ck.model(frames).data, model(frames).data)


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError):
        load_checkpoint(p)
