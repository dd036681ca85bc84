"""
Model - The SALF-MOS network and its SALF-C1 checkpoints

A depth-d stack of Double Convolutions (conv -> batch norm -> ReLU, twice)
with pairwise downsampling between stages. Every stage output also feeds a
Latent Feature Extraction (LFE) linear head; the LFE outputs are stacked and
mapped to a MOS by a final linear head.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .autodiff import (
    BatchNormState,
    Tape,
    Tensor,
    avgpool1d_k2s2,
    batchnorm1d,
    concat,
    conv1d,
    flatten,
    linear,
    maxpool1d_k2s2,
    relu,
)
from .config import FeatureKind, Pooling, SalfConfig
from .errors import (
    BadConfig,
    CheckpointMagic,
    ConfigMismatch,
    IoFailure,
    ShapeMismatch,
    VersionUnsupported,
)

logger = logging.getLogger(__name__)

MOS_MIN = 1.0
MOS_MAX = 5.0
STD_FLOOR = 1e-8

CHECKPOINT_MAGIC = b"SLC1"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<4sH")
_CONFIG_BLOCK = struct.Struct("<BIBBBB")


def _as_f32(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)


@dataclass
class Standardizer:
    """Per-dimension mean/std fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dims: int) -> "Standardizer":
        return cls(np.zeros(dims), np.ones(dims))

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        std = np.maximum(features.std(axis=0), STD_FLOOR)
        # Stored as float-32 in checkpoints
        return cls(_as_f32(mean), _as_f32(std))

    @property
    def dims(self) -> int:
        return len(self.mean)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


@dataclass
class ConvUnit:
    """conv1d(k3/s1/p1) -> batchnorm1d -> ReLU."""

    weight: Tensor
    bias: Tensor
    gamma: Tensor
    beta: Tensor
    bn: BatchNormState

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias, self.gamma, self.beta]

    def __call__(self, x: Tensor, training: bool, tape: Optional[Tape]) -> Tensor:
        x = conv1d(x, self.weight, self.bias, tape)
        x = batchnorm1d(x, self.gamma, self.beta, self.bn, training, tape)
        return relu(x, tape)


@dataclass
class DoubleConv:
    first: ConvUnit
    second: ConvUnit

    def parameters(self) -> List[Tensor]:
        return self.first.parameters() + self.second.parameters()

    def bn_states(self) -> List[BatchNormState]:
        return [self.first.bn, self.second.bn]

    def __call__(self, x: Tensor, training: bool, tape: Optional[Tape]) -> Tensor:
        return self.second(self.first(x, training, tape), training, tape)


@dataclass
class LinearHead:
    weight: Tensor
    bias: Tensor

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor, tape: Optional[Tape]) -> Tensor:
        return linear(x, self.weight, self.bias, tape)


@dataclass
class SalfModel:
    """Trained (or freshly initialized) SALF-MOS parameter set."""

    config: SalfConfig
    blocks: List[DoubleConv]
    lfe_heads: List[LinearHead]
    final_head: LinearHead
    standardizer: Optional[Standardizer] = None

    def __post_init__(self):
        cfg = self.config
        if len(self.blocks) != cfg.depth or len(self.lfe_heads) != cfg.depth:
            raise BadConfig(
                f"Depth {cfg.depth} needs {cfg.depth} blocks and LFE heads, got "
                f"{len(self.blocks)} / {len(self.lfe_heads)}"
            )
        for i, (head, length) in enumerate(zip(self.lfe_heads, cfg.stage_lengths())):
            expected = (cfg.lfe_dim, cfg.channels * length)
            if head.weight.shape != expected:
                raise BadConfig(
                    f"LFE head {i + 1} has weight {head.weight.shape}, expected {expected}"
                )
        if self.standardizer is None:
            self.standardizer = Standardizer.identity(cfg.input_dim)
        if self.standardizer.dims != cfg.input_dim:
            raise BadConfig(
                f"Standardizer covers {self.standardizer.dims} dims, "
                f"model expects {cfg.input_dim}"
            )

    # Parameters

    def parameters(self) -> List[Tensor]:
        """Trainable tensors in construction order."""
        params: List[Tensor] = []
        for block in self.blocks:
            params.extend(block.parameters())
        for head in self.lfe_heads:
            params.extend(head.parameters())
        params.extend(self.final_head.parameters())
        return params

    def bn_states(self) -> List[BatchNormState]:
        return [state for block in self.blocks for state in block.bn_states()]

    def num_parameters(self) -> int:
        return sum(p.values.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def snapshot(self) -> Tuple[List[np.ndarray], List[BatchNormState]]:
        return [p.values.copy() for p in self.parameters()], [
            s.copy() for s in self.bn_states()
        ]

    def restore(self, snap: Tuple[List[np.ndarray], List[BatchNormState]]) -> None:
        values, states = snap
        for p, v in zip(self.parameters(), values):
            p.values = v.copy()
        for block_state, saved in zip(self.bn_states(), states):
            block_state.running_mean = saved.running_mean.copy()
            block_state.running_var = saved.running_var.copy()

    def round_to_float32(self) -> None:
        """Round parameters and running stats to float-32 representable values."""
        for p in self.parameters():
            p.values = _as_f32(p.values)
        for state in self.bn_states():
            state.running_mean = _as_f32(state.running_mean)
            state.running_var = _as_f32(state.running_var)

    # Forward

    def prepare(self, features: np.ndarray) -> np.ndarray:
        """Standardize raw (B, input_dim) features and zero-pad to network_dim."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ShapeMismatch(
                f"Expected feature vectors of length {self.config.input_dim}, "
                f"got shape {features.shape}"
            )
        standardized = self.standardizer.apply(features)
        pad = self.config.network_dim - self.config.input_dim
        return np.pad(standardized, ((0, 0), (0, pad)))

    def forward_network(
        self, x: np.ndarray, training: bool, tape: Optional[Tape] = None
    ) -> Tensor:
        """Run prepared (B, network_dim) inputs through the network; returns (B, 1)."""
        pool = (
            maxpool1d_k2s2 if self.config.pooling == Pooling.MAX else avgpool1d_k2s2
        )
        h = Tensor(x[:, None, :])
        latents = []
        for i, (block, head) in enumerate(zip(self.blocks, self.lfe_heads)):
            h = block(h, training, tape)
            latents.append(head(flatten(h, tape), tape))
            if i < self.config.depth - 1:
                h = pool(h, tape)
        return self.final_head(concat(latents, tape), tape)

    def forward(
        self, features: np.ndarray, training: bool = False, tape: Optional[Tape] = None
    ) -> Tensor:
        """Raw MOS predictions (unclamped) for raw (B, input_dim) features."""
        return self.forward_network(self.prepare(features), training, tape)

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        """Eval-mode predictions, clamped to [1, 5] when ``clamp_output`` is set."""
        out = self.forward(features, training=False).values[:, 0]
        if self.config.clamp_output:
            out = np.clip(out, MOS_MIN, MOS_MAX)
        return out

    def predict(self, vector: np.ndarray) -> float:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.ndim != 1:
            raise ShapeMismatch(
                f"predict expects one feature vector, got {vector.shape}"
            )
        return float(self.predict_batch(vector[None, :])[0])


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    values = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(values, requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def _ones(shape, name: str) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


def _conv_unit(rng, cin: int, cout: int, prefix: str) -> ConvUnit:
    return ConvUnit(
        weight=_uniform(rng, (cout, cin, 3), cin * 3, f"{prefix}.weight"),
        bias=_zeros(cout, f"{prefix}.bias"),
        gamma=_ones(cout, f"{prefix}.bn.gamma"),
        beta=_zeros(cout, f"{prefix}.bn.beta"),
        bn=BatchNormState.fresh(cout),
    )


def build_model(cfg: SalfConfig, seed: int = 0) -> SalfModel:
    """
    Deterministically initialize a model from ``seed``.

    Conv and linear weights are uniform in +-1/sqrt(fan_in) (rounded to
    float-32), biases 0, gamma 1, beta 0, running stats mean 0 / var 1.
    """
    lengths = cfg.stage_lengths()
    if cfg.network_dim % cfg.pad_multiple or lengths[-1] < 1:
        raise BadConfig(
            f"network_dim {cfg.network_dim} is not divisible by 2^(depth-1)"
        )

    rng = np.random.default_rng(seed)
    c = cfg.channels
    blocks = []
    for i in range(cfg.depth):
        cin = 1 if i == 0 else c
        blocks.append(
            DoubleConv(
                _conv_unit(rng, cin, c, f"block{i + 1}.conv1"),
                _conv_unit(rng, c, c, f"block{i + 1}.conv2"),
            )
        )

    lfe_heads = [
        LinearHead(
            _uniform(rng, (cfg.lfe_dim, c * length), c * length, f"lfe{i + 1}.weight"),
            _zeros(cfg.lfe_dim, f"lfe{i + 1}.bias"),
        )
        for i, length in enumerate(lengths)
    ]
    stacked = cfg.depth * cfg.lfe_dim
    final_head = LinearHead(
        _uniform(rng, (1, stacked), stacked, "final.weight"), _zeros(1, "final.bias")
    )

    model = SalfModel(cfg, blocks, lfe_heads, final_head)
    logger.debug(
        f"Built depth-{cfg.depth} model, stage lengths {lengths}, "
        f"{model.num_parameters()} parameters"
    )
    return model


def param_count(cfg: SalfConfig) -> int:
    """
    Trainable parameters (running stats excluded).

    For channels=1, lfe_dim=1 this is
    12*depth + sum(len_i + 1) + (depth + 1).
    """
    c, lfe = cfg.channels, cfg.lfe_dim
    convs = sum(
        ((1 if i == 0 else c) * c * 3 + c) + 2 * c + (c * c * 3 + c) + 2 * c
        for i in range(cfg.depth)
    )
    heads = sum(c * length * lfe + lfe for length in cfg.stage_lengths())
    final = cfg.depth * lfe + 1
    return convs + heads + final


# SALF-C1 checkpoints


def _checkpoint_arrays(model: SalfModel) -> List[np.ndarray]:
    """Every stored array in fixed construction order."""
    arrays: List[np.ndarray] = []
    for block in model.blocks:
        for unit in (block.first, block.second):
            arrays.extend(p.values for p in unit.parameters())
            arrays.extend([unit.bn.running_mean, unit.bn.running_var])
    for head in model.lfe_heads + [model.final_head]:
        arrays.extend(p.values for p in head.parameters())
    return arrays


def _stored_floats(cfg: SalfConfig) -> int:
    """Float count after the config block: standardizer, parameters, running stats."""
    running_stats = 2 * 2 * cfg.depth * cfg.channels
    return 2 * cfg.input_dim + param_count(cfg) + running_stats


def encode_checkpoint(model: SalfModel) -> bytes:
    cfg = model.config
    parts = [
        _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION),
        _CONFIG_BLOCK.pack(
            cfg.depth,
            cfg.input_dim,
            cfg.channels,
            cfg.lfe_dim,
            cfg.feature_kind.code,
            cfg.pooling.code,
        ),
        model.standardizer.mean.astype("<f4").tobytes(),
        model.standardizer.std.astype("<f4").tobytes(),
    ]
    parts.extend(a.astype("<f4").tobytes() for a in _checkpoint_arrays(model))
    return b"".join(parts)


def decode_checkpoint(data: bytes, expected: Optional[SalfConfig] = None) -> SalfModel:
    """
    Rebuild a model from SALF-C1 bytes.

    Raises:
        CheckpointMagic: wrong magic
        VersionUnsupported: unknown format version
        ConfigMismatch: invalid config block, differs from ``expected``,
            or trailing bytes after the parameters
        IoFailure: payload shorter than the config requires
    """
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagic(f"Expected magic {CHECKPOINT_MAGIC!r}, got {data[:4]!r}")
    header_size = _PREAMBLE.size + _CONFIG_BLOCK.size
    if len(data) < header_size:
        raise IoFailure("Checkpoint header is truncated")
    _, version = _PREAMBLE.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(
            f"Checkpoint format version {version} is not supported"
        )

    depth, input_dim, channels, lfe_dim, kind, pooling = _CONFIG_BLOCK.unpack_from(
        data, _PREAMBLE.size
    )
    try:
        cfg = SalfConfig(
            depth=depth,
            input_dim=input_dim,
            channels=channels,
            lfe_dim=lfe_dim,
            feature_kind=FeatureKind.from_code(kind),
            pooling=Pooling.from_code(pooling),
        )
    except ValueError as e:
        raise ConfigMismatch(f"Invalid checkpoint config: {e}") from e
    if expected is not None and expected.summary() != cfg.summary():
        raise ConfigMismatch(
            f"Checkpoint config {cfg.summary()} differs from expected {expected.summary()}"
        )

    needed = _stored_floats(cfg) * 4
    payload = memoryview(data)[header_size:]
    if len(payload) < needed:
        raise IoFailure(
            f"Checkpoint is truncated: {len(payload)} of {needed} parameter bytes"
        )
    if len(payload) > needed:
        raise ConfigMismatch(
            f"Checkpoint has {len(payload) - needed} bytes beyond its parameters"
        )

    model = build_model(cfg, seed=0)
    targets = [np.empty(cfg.input_dim), np.empty(cfg.input_dim)]
    targets.extend(_checkpoint_arrays(model))

    floats = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    offset = 0
    loaded = []
    for target in targets:
        loaded.append(floats[offset : offset + target.size].reshape(target.shape))
        offset += target.size

    model.standardizer = Standardizer(loaded[0], loaded[1])
    arrays = iter(loaded[2:])
    for block in model.blocks:
        for unit in (block.first, block.second):
            for p in unit.parameters():
                p.values = next(arrays).copy()
            unit.bn.running_mean = next(arrays).copy()
            unit.bn.running_var = next(arrays).copy()
    for head in model.lfe_heads + [model.final_head]:
        for p in head.parameters():
            p.values = next(arrays).copy()
    return model


def save_checkpoint(model: SalfModel, path: Union[str, Path]) -> None:
    try:
        Path(path).write_bytes(encode_checkpoint(model))
    except OSError as e:
        raise IoFailure(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(
    path: Union[str, Path], expected: Optional[SalfConfig] = None
) -> SalfModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"Cannot read checkpoint {path}: {e}") from e
    model = decode_checkpoint(data, expected)
    logger.info(
        f"Loaded depth-{model.config.depth} {model.config.feature_kind.value} "
        f"checkpoint from {path}"
    )
    return model
