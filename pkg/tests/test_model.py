import numpy as np
import pytest

import core.model as model_module
from core.autodiff import (
    Tape,
    Tensor,
    finite_difference,
    l1_loss,
    maxpool1d_k2s2,
    relative_error,
    relu,
)
from core.config import FeatureKind, Pooling, SalfConfig
from core.errors import (
    BadConfig,
    CheckpointMagic,
    ConfigMismatch,
    IoFailure,
    ShapeMismatch,
    VersionUnsupported,
)
from core.model import (
    LinearHead,
    SalfModel,
    Standardizer,
    build_model,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    param_count,
    save_checkpoint,
)

# Inputs whose ReLU or max-pool switch points lie closer than this are redrawn
KINK_MARGIN = 1e-3


def _zeroed(cfg: SalfConfig):
    model = build_model(cfg)
    for p in model.parameters():
        p.values = np.zeros_like(p.values)
    return model


def _trained_looking(cfg: SalfConfig, seed: int = 0):
    """A model with non-trivial standardizer and running stats."""
    rng = np.random.default_rng(seed)
    model = build_model(cfg, seed=seed)
    model.standardizer = Standardizer.fit(
        rng.normal(2.0, 3.0, size=(10, cfg.input_dim))
    )
    for state in model.bn_states():
        state.running_mean = rng.normal(scale=0.1, size=state.running_mean.shape)
        state.running_var = rng.uniform(0.5, 2.0, size=state.running_var.shape)
    for p in model.parameters():
        p.values = p.values + rng.normal(scale=0.1, size=p.values.shape)
    model.round_to_float32()
    return model


def _positive_stages(cfg: SalfConfig):
    """Non-negative conv weights and positive biases keep later ReLUs open."""
    model = build_model(cfg, seed=5)
    for block in model.blocks:
        for unit in (block.first, block.second):
            unit.weight.values = np.abs(unit.weight.values)
            unit.bias.values = np.full_like(unit.bias.values, 0.5)
    return model


def _kink_margin(model, x: np.ndarray, training: bool) -> float:
    """Distance of the closest ReLU input or live max-pool pair to a switch point."""
    margins = []

    def tracked_relu(t, tape=None):
        margins.append(np.min(np.abs(t.values)))
        return relu(t, tape)

    def tracked_pool(t, tape=None):
        left, right = t.values[..., 0::2], t.values[..., 1::2]
        live = np.maximum(left, right) > 0
        if live.any():
            margins.append(np.min(np.abs(left - right)[live]))
        return maxpool1d_k2s2(t, tape)

    with pytest.MonkeyPatch.context() as m:
        m.setattr(model_module, "relu", tracked_relu)
        m.setattr(model_module, "maxpool1d_k2s2", tracked_pool)
        model.forward_network(x, training)
    return min(margins)


def test_default_stage_lengths():
    cfg = SalfConfig()
    assert cfg.network_dim == 512
    assert cfg.stage_lengths() == [512, 256, 128, 64]


def test_input_padding():
    cfg = SalfConfig(depth=4, input_dim=20)
    assert cfg.network_dim == 24
    assert cfg.stage_lengths() == [24, 12, 6, 3]
    model = build_model(cfg)
    prepared = model.prepare(np.ones((2, 20)))
    assert prepared.shape == (2, 24)
    np.testing.assert_array_equal(prepared[:, 20:], 0.0)


def test_depth_one_has_single_stage():
    cfg = SalfConfig(depth=1, input_dim=8)
    model = build_model(cfg)
    assert len(model.blocks) == 1
    assert model.lfe_heads[0].weight.shape == (1, 8)
    assert model.forward(np.ones((3, 8))).shape == (3, 1)


def test_same_seed_same_parameters():
    cfg = SalfConfig(depth=3, input_dim=32)
    first, second = build_model(cfg, seed=5), build_model(cfg, seed=5)
    for a, b in zip(first.parameters(), second.parameters()):
        assert a.name == b.name
        np.testing.assert_array_equal(a.values, b.values)
    other = build_model(cfg, seed=6)
    assert not np.array_equal(
        first.parameters()[0].values, other.parameters()[0].values
    )


def test_initialization_scheme():
    model = build_model(SalfConfig(depth=2, input_dim=16), seed=1)
    for p in model.parameters():
        if p.name.endswith("bias") or p.name.endswith("beta"):
            np.testing.assert_array_equal(p.values, 0.0)
        elif p.name.endswith("gamma"):
            np.testing.assert_array_equal(p.values, 1.0)
        else:
            fan_in = int(np.prod(p.shape[1:]))
            assert np.all(np.abs(p.values) <= 1.0 / np.sqrt(fan_in))
            np.testing.assert_array_equal(p.values, p.values.astype(np.float32))


def test_zero_parameters_predict_zero():
    model = _zeroed(SalfConfig(depth=2, input_dim=16, clamp_output=False))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(model.predict_batch(rng.normal(size=(4, 16))), 0.0)


def test_hand_built_depth_one():
    cfg = SalfConfig(depth=1, input_dim=1, clamp_output=False)
    model = _zeroed(cfg)
    for unit in (model.blocks[0].first, model.blocks[0].second):
        unit.weight.values = np.array([[[0.0, 1.0, 0.0]]])
        unit.gamma.values = np.ones(1)
    model.lfe_heads[0].weight.values = np.array([[1.0]])
    model.final_head.weight.values = np.array([[1.0]])
    # Two eval-mode batch norms each divide by sqrt(1 + eps)
    assert model.predict(np.array([10.0])) == pytest.approx(10.0 / (1 + 1e-5))


@pytest.mark.parametrize("bias,expected", [(-0.3, 1.0), (7.0, 5.0), (3.25, 3.25)])
def test_output_clamp(bias, expected):
    model = _zeroed(SalfConfig(depth=2, input_dim=8))
    model.final_head.bias.values = np.array([bias])
    assert model.predict(np.ones(8)) == pytest.approx(expected)


def test_unclamped_output():
    model = _zeroed(SalfConfig(depth=2, input_dim=8, clamp_output=False))
    model.final_head.bias.values = np.array([-0.3])
    assert model.predict(np.ones(8)) == pytest.approx(-0.3)


@pytest.mark.parametrize("depth", range(1, 9))
@pytest.mark.parametrize("dims", [64, 128, 512])
def test_param_count_matches_enumeration(depth, dims):
    cfg = SalfConfig(depth=depth, input_dim=dims)
    assert param_count(cfg) == build_model(cfg).num_parameters()


def test_param_count_known_values():
    assert param_count(SalfConfig()) == 1017
    assert param_count(SalfConfig(depth=1, input_dim=8)) == 23
    wide = SalfConfig(depth=2, input_dim=8, channels=3, lfe_dim=2)
    assert param_count(wide) == build_model(wide).num_parameters()


def test_wrong_input_length():
    model = build_model(SalfConfig(depth=2, input_dim=16))
    with pytest.raises(ShapeMismatch):
        model.predict_batch(np.ones((2, 15)))
    with pytest.raises(ShapeMismatch):
        model.predict(np.ones((1, 16)))


def test_eval_is_pure():
    model = _trained_looking(SalfConfig(depth=3, input_dim=16))
    x = np.random.default_rng(2).normal(size=(5, 16))
    before = model.snapshot()
    first = model.predict_batch(x)
    np.testing.assert_array_equal(first, model.predict_batch(x))
    for a, b in zip(before[0], model.snapshot()[0]):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(before[1], model.bn_states()):
        np.testing.assert_array_equal(a.running_mean, b.running_mean)
        np.testing.assert_array_equal(a.running_var, b.running_var)


def test_average_pooling_variant():
    x = np.random.default_rng(3).normal(size=(3, 16))
    max_model = _positive_stages(SalfConfig(depth=3, input_dim=16))
    avg_model = _positive_stages(SalfConfig(depth=3, input_dim=16, pooling=Pooling.AVG))

    first_stage = max_model.blocks[0](Tensor(x[:, None, :]), False, None)
    assert np.all(first_stage.values[..., 0::2] != first_stage.values[..., 1::2])

    max_out = max_model.forward(x).values
    avg_out = avg_model.forward(x).values
    assert np.all(np.isfinite(max_out)) and np.all(np.isfinite(avg_out))
    assert not np.allclose(max_out, avg_out)


def test_mismatched_heads_rejected():
    model = build_model(SalfConfig(depth=2, input_dim=8))
    model.lfe_heads[1] = LinearHead(model.lfe_heads[0].weight, model.lfe_heads[0].bias)
    with pytest.raises(BadConfig):
        SalfModel(model.config, model.blocks, model.lfe_heads, model.final_head)


def test_checkpoint_roundtrip_is_exact(tmp_path):
    cfg = SalfConfig(depth=4, input_dim=40, feature_kind=FeatureKind.MFCC)
    model = _trained_looking(cfg, seed=11)
    path = tmp_path / "model.slc"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, expected=cfg)

    assert loaded.config == cfg
    x = np.random.default_rng(4).normal(size=(100, 40))
    np.testing.assert_array_equal(loaded.predict_batch(x), model.predict_batch(x))
    assert encode_checkpoint(loaded) == path.read_bytes()


def test_checkpoint_roundtrip_random_configs():
    rng = np.random.default_rng(12)
    kinds, poolings = list(FeatureKind), list(Pooling)
    for i in range(100):
        cfg = SalfConfig(
            depth=int(rng.integers(1, 7)),
            input_dim=int(rng.integers(1, 80)),
            channels=int(rng.integers(1, 4)),
            lfe_dim=int(rng.integers(1, 3)),
            feature_kind=kinds[i % len(kinds)],
            pooling=poolings[i % len(poolings)],
        )
        model = _trained_looking(cfg, seed=i)
        data = encode_checkpoint(model)
        loaded = decode_checkpoint(data, expected=cfg)
        assert encode_checkpoint(loaded) == data
        x = rng.normal(size=(3, cfg.input_dim))
        np.testing.assert_array_equal(loaded.predict_batch(x), model.predict_batch(x))


def test_checkpoint_errors(tmp_path):
    cfg = SalfConfig(depth=2, input_dim=16)
    data = encode_checkpoint(build_model(cfg))

    with pytest.raises(CheckpointMagic):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointMagic):
        decode_checkpoint(data[:3])
    with pytest.raises(IoFailure):
        decode_checkpoint(data[:10])
    with pytest.raises(IoFailure):
        decode_checkpoint(data[:-4])
    with pytest.raises(VersionUnsupported):
        decode_checkpoint(data[:4] + (2).to_bytes(2, "little") + data[6:])
    with pytest.raises(ConfigMismatch):
        decode_checkpoint(data + b"\x00" * 4)
    with pytest.raises(ConfigMismatch):
        decode_checkpoint(data, expected=SalfConfig(depth=3, input_dim=16))
    with pytest.raises(ConfigMismatch):
        # depth 0 is not a valid architecture
        decode_checkpoint(data[:6] + b"\x00" + data[7:])
    with pytest.raises(IoFailure):
        load_checkpoint(tmp_path / "missing.slc")


def test_truncated_checkpoint_rejected_before_allocation(monkeypatch):
    data = bytearray(encode_checkpoint(build_model(SalfConfig(depth=2, input_dim=16))))
    data[7:11] = (2**31).to_bytes(4, "little")

    def no_build(*args, **kwargs):
        raise AssertionError("model built before the payload size was checked")

    monkeypatch.setattr(model_module, "build_model", no_build)
    with pytest.raises(IoFailure):
        decode_checkpoint(bytes(data))


@pytest.mark.slow
@pytest.mark.parametrize("trial", range(100))
def test_full_model_gradients(trial):
    training = trial % 2 == 0
    cfg = SalfConfig(depth=4, input_dim=16)
    model = _trained_looking(cfg, seed=trial)
    rng = np.random.default_rng(1000 + trial)
    for _ in range(50):
        x = model.prepare(rng.normal(size=(4, 16)))
        if _kink_margin(model, x, training) > KINK_MARGIN:
            break
    else:
        pytest.fail("no input clear of ReLU and max-pool switch points")
    y = rng.uniform(1, 5, size=(4, 1))

    def loss_value() -> float:
        return l1_loss(model.forward_network(x, training), y).item()

    tape = Tape()
    grads = tape.backward(l1_loss(model.forward_network(x, training, tape), y, tape))
    for p in model.parameters():
        numeric = finite_difference(loss_value, p.values)
        assert relative_error(grads[p], numeric) < 1e-4, p.name
