"""
Configuration - Validated settings for features, model, training and runtime

Architecture and recipe hyperparameters are pydantic models; process-level
settings come from the environment through pydantic-settings.
"""

import math
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar, Dict, FrozenSet, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

WORKING_RATE = 16000
MAX_DEPTH = 16


class FeatureKind(str, Enum):
    """Feature source kinds; the integer code is the SALF-F1 enum value."""

    MFCC = "mfcc"
    LFCC = "lfcc"
    WAV2VEC = "wav2vec"
    XVECTOR = "xvector"
    RAW = "raw"

    @property
    def code(self) -> int:
        return list(FeatureKind).index(self)

    @classmethod
    def from_code(cls, code: int) -> "FeatureKind":
        members = list(cls)
        if not 0 <= code < len(members):
            raise ValueError(f"Unknown feature kind code: {code}")
        return members[code]

    @property
    def is_cepstral(self) -> bool:
        return self in (FeatureKind.MFCC, FeatureKind.LFCC)


class Pooling(str, Enum):
    MAX = "max"
    AVG = "avg"

    @property
    def code(self) -> int:
        return list(Pooling).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Pooling":
        members = list(cls)
        if not 0 <= code < len(members):
            raise ValueError(f"Unknown pooling code: {code}")
        return members[code]


class CepstralConfig(BaseModel):
    """Framing and filterbank parameters shared by MFCC and LFCC."""

    model_config = ConfigDict(frozen=True)

    frame_ms: float = Field(25.0, gt=0)
    hop_ms: float = Field(10.0, gt=0)
    num_filters: int = Field(40, ge=1)
    num_coeffs: int = Field(20, ge=1)
    window: str = "hann"
    pre_emphasis: float = Field(0.97, ge=0.0, lt=1.0)
    fft_size: int = Field(512, ge=2)
    floor: float = Field(1e-10, gt=0)
    low_hz: float = Field(0.0, ge=0)
    high_hz: Optional[float] = None

    @model_validator(mode="after")
    def _check_sizes(self) -> "CepstralConfig":
        if self.num_coeffs > self.num_filters:
            raise ValueError(
                f"num_coeffs ({self.num_coeffs}) exceeds num_filters ({self.num_filters})"
            )
        if self.fft_size < self.frame_length(WORKING_RATE):
            raise ValueError(
                f"fft_size {self.fft_size} is shorter than a "
                f"{self.frame_length(WORKING_RATE)}-sample frame"
            )
        top = self.upper_edge(WORKING_RATE)
        if not self.low_hz < top <= WORKING_RATE / 2:
            raise ValueError(f"Filterbank edges {self.low_hz}-{top} Hz are invalid")
        return self

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def upper_edge(self, sample_rate: int) -> float:
        return self.high_hz if self.high_hz is not None else sample_rate / 2


class SalfConfig(BaseModel):
    """
    Architecture hyperparameters.

    ``input_dim`` is the raw feature width; the network runs on
    ``network_dim``, the width zero-padded to a multiple of 2^(depth-1).
    """

    model_config = ConfigDict(frozen=True)

    depth: int = Field(4, ge=1, le=MAX_DEPTH)
    input_dim: int = Field(512, ge=1, lt=2**32)
    channels: int = Field(1, ge=1, le=255)
    lfe_dim: int = Field(1, ge=1, le=255)
    clamp_output: bool = True
    feature_kind: FeatureKind = FeatureKind.WAV2VEC
    pooling: Pooling = Pooling.MAX

    @property
    def pad_multiple(self) -> int:
        return 2 ** (self.depth - 1)

    @property
    def network_dim(self) -> int:
        return math.ceil(self.input_dim / self.pad_multiple) * self.pad_multiple

    def stage_lengths(self) -> List[int]:
        return [self.network_dim // 2**i for i in range(self.depth)]

    def summary(self) -> Dict[str, Any]:
        return {
            "depth": self.depth,
            "input_dim": self.input_dim,
            "network_dim": self.network_dim,
            "channels": self.channels,
            "lfe_dim": self.lfe_dim,
            "feature_kind": self.feature_kind.value,
            "pooling": self.pooling.value,
        }


class TrainConfig(BaseModel):
    """SGD recipe: lr 1e-4, L1 loss, batch 4, patience 20."""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(1e-4, ge=0.0)
    batch_size: int = Field(4, ge=1)
    max_epochs: int = Field(1000, ge=1)
    patience_epochs: int = Field(20, ge=1)
    seed: int = 0
    shuffle_each_epoch: bool = True
    standardize: bool = True

    @field_validator("learning_rate")
    @classmethod
    def _finite_lr(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("learning_rate must be finite")
        return value


class Command(str, Enum):
    FEATURES = "features"
    TRAIN = "train"
    EVALUATE = "evaluate"
    PREDICT = "predict"
    ABLATE = "ablate"
    SERVE = "serve"


class RunSpec(BaseModel):
    """A CLI command with its paths and hyperparameter overrides."""

    command: Command
    paths: Dict[str, Optional[Path]] = Field(default_factory=dict)
    overrides: Dict[str, Any] = Field(default_factory=dict)

    _MODEL_KEYS: ClassVar[FrozenSet[str]] = frozenset(
        {"depth", "input_dim", "channels", "lfe_dim", "feature_kind", "pooling"}
    )
    _TRAIN_KEYS: ClassVar[FrozenSet[str]] = frozenset(
        {
            "learning_rate",
            "batch_size",
            "max_epochs",
            "patience_epochs",
            "seed",
            "shuffle_each_epoch",
            "standardize",
        }
    )

    @model_validator(mode="after")
    def _validate_overrides(self) -> "RunSpec":
        self.overrides = {k: v for k, v in self.overrides.items() if v is not None}
        unknown = set(self.overrides) - self._MODEL_KEYS - self._TRAIN_KEYS
        if unknown:
            raise ValueError(f"Unknown overrides: {sorted(unknown)}")
        # Build both configs now so invalid values fail before any work starts
        self.salf_config()
        self.train_config()
        return self

    def salf_config(self, **extra: Any) -> SalfConfig:
        values = {k: v for k, v in self.overrides.items() if k in self._MODEL_KEYS}
        values.update(extra)
        return SalfConfig(**values)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            **{k: v for k, v in self.overrides.items() if k in self._TRAIN_KEYS}
        )

    @classmethod
    def from_sources(
        cls,
        command: Command,
        paths: Dict[str, Optional[Path]],
        flags: Dict[str, Any],
        config_file: Optional[Path] = None,
    ) -> "RunSpec":
        """Merge a YAML config file with CLI flags; flags win."""
        overrides: Dict[str, Any] = {}
        if config_file is not None:
            with open(config_file, "r") as f:
                loaded = yaml.safe_load(f) or {}
            if not isinstance(loaded, dict):
                raise ValueError(f"{config_file} must contain a mapping")
            overrides.update(loaded)
        overrides.update({k: v for k, v in flags.items() if v is not None})
        return cls(command=command, paths=paths, overrides=overrides)


class Settings(BaseSettings):
    """Process-level settings read from SALF_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="SALF_")

    log: str = "INFO"
    workers: int = Field(4, ge=1)
    runs_dir: Path = Path("./runs")
