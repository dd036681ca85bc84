import pytest
from pydantic import ValidationError

from core.config import (
    CepstralConfig,
    Command,
    FeatureKind,
    Pooling,
    RunSpec,
    SalfConfig,
    Settings,
    TrainConfig,
)


def test_training_recipe_defaults():
    cfg = TrainConfig()
    assert cfg.learning_rate == 1e-4
    assert cfg.batch_size == 4
    assert cfg.patience_epochs == 20
    assert cfg.standardize is True


def test_model_defaults():
    cfg = SalfConfig()
    assert (cfg.depth, cfg.input_dim, cfg.channels, cfg.lfe_dim) == (4, 512, 1, 1)
    assert cfg.feature_kind == FeatureKind.WAV2VEC
    assert cfg.pooling == Pooling.MAX
    assert cfg.clamp_output


def test_cepstral_defaults():
    cfg = CepstralConfig()
    assert cfg.frame_length(16000) == 400
    assert cfg.hop_length(16000) == 160
    assert cfg.upper_edge(16000) == 8000


@pytest.mark.parametrize(
    "kwargs",
    [{"depth": 0}, {"depth": 17}, {"input_dim": 0}, {"channels": 0}],
)
def test_invalid_model_config(kwargs):
    with pytest.raises(ValidationError):
        SalfConfig(**kwargs)


@pytest.mark.parametrize("lr", [-1.0, float("nan"), float("inf")])
def test_invalid_learning_rate(lr):
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=lr)


def test_feature_kind_codes():
    assert [k.code for k in FeatureKind] == [0, 1, 2, 3, 4]
    assert FeatureKind.from_code(3) == FeatureKind.XVECTOR
    assert FeatureKind.MFCC.is_cepstral and not FeatureKind.RAW.is_cepstral
    with pytest.raises(ValueError):
        FeatureKind.from_code(5)


def test_run_spec_merges_yaml_then_flags(tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text("depth: 2\nlearning_rate: 0.01\npooling: avg\n", encoding="utf-8")
    spec = RunSpec.from_sources(
        Command.TRAIN,
        {"manifest": tmp_path / "m.csv"},
        {"depth": 3, "seed": None, "batch_size": 8},
        config,
    )
    salf, training = spec.salf_config(), spec.train_config()
    assert salf.depth == 3
    assert salf.pooling == Pooling.AVG
    assert training.learning_rate == 0.01
    assert training.batch_size == 8
    assert training.seed == 0


def test_run_spec_rejects_unknown_and_invalid(tmp_path):
    with pytest.raises(ValidationError):
        RunSpec(command=Command.TRAIN, overrides={"momentum": 0.9})
    with pytest.raises(ValidationError):
        RunSpec(command=Command.TRAIN, overrides={"depth": 99})
    config = tmp_path / "list.yaml"
    config.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        RunSpec.from_sources(Command.TRAIN, {}, {}, config)


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SALF_WORKERS", "2")
    monkeypatch.setenv("SALF_LOG", "debug")
    settings = Settings()
    assert settings.workers == 2
    assert settings.log == "debug"
    assert settings.runs_dir == tmp_path / "runs"
