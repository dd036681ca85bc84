"""
Training - Seeded splits, standardization and SGD with early stopping

The recipe is plain SGD (no momentum, no weight decay) on L1 loss with
batches of 4. Validation MSE is computed after every epoch; the parameters
of the best epoch are kept and training stops once ``patience_epochs``
epochs pass without improvement.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tape, l1_loss
from .config import CepstralConfig, SalfConfig, TrainConfig
from .dataset import FeatureSet, Manifest, resolve_feature_set
from .errors import (
    BatchTooSmall,
    EmptySplit,
    FeatureDimMismatch,
    IoFailure,
    MetricError,
    TooFewSamples,
    TooFewUtterances,
)
from .metrics import ScorePairs, ktau, lcc, mse, srcc
from .model import SalfModel, Standardizer, build_model

logger = logging.getLogger(__name__)

MIN_UTTERANCES = 10
HISTORY_COLUMNS = ("epoch", "train_l1", "val_mse", "val_lcc", "val_srcc", "val_ktau")


# Splitting


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train/val/test utterance ids."""

    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split_ids(ids: Sequence[str], seed: int) -> DataSplit:
    """Seeded shuffle, then floor(0.8n) / floor(0.1n) / remainder."""
    n = len(ids)
    if n < MIN_UTTERANCES:
        raise TooFewUtterances(
            f"An 8:1:1 split needs at least {MIN_UTTERANCES} utterances, got {n}"
        )
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train, n_val = (8 * n) // 10, n // 10
    return DataSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
    )


def split_dataset(
    manifest: Manifest, seed: int
) -> Tuple[Manifest, Manifest, Manifest]:
    split = split_ids(manifest.ids, seed)
    return (
        manifest.subset(split.train),
        manifest.subset(split.val),
        manifest.subset(split.test),
    )


def fit_standardizer(features: np.ndarray) -> Standardizer:
    """Per-dimension mean and biased std (floored at 1e-8) of training rows."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(features) < 2:
        raise TooFewSamples(
            f"Standardization needs at least 2 training utterances, got {len(features)}"
        )
    return Standardizer.fit(features)


# History


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_l1: float
    val_mse: float
    val_lcc: Optional[float]
    val_srcc: Optional[float]
    val_ktau: Optional[float]

    def row(self) -> List[str]:
        return [str(self.epoch)] + [
            "" if v is None else repr(float(v))
            for v in (
                self.train_l1,
                self.val_mse,
                self.val_lcc,
                self.val_srcc,
                self.val_ktau,
            )
        ]


@dataclass
class TrainHistory:
    """Per-epoch training loss and validation metrics."""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EpochRecord]:
        return iter(self.records)

    @property
    def best(self) -> Optional[EpochRecord]:
        if self.best_epoch is None:
            return None
        return self.records[self.best_epoch - 1]

    def write_csv(self, path: Union[str, Path]) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(HISTORY_COLUMNS)
                for record in self.records:
                    writer.writerow(record.row())
        except OSError as e:
            raise IoFailure(f"Cannot write history CSV {path}: {e}") from e


# SGD


def _batches(
    order: np.ndarray, batch_size: int, merge_singleton: bool
) -> List[np.ndarray]:
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # Train-mode batch norm cannot normalize a single value per channel
    if merge_singleton and len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _quiet(metric, pairs: ScorePairs) -> Optional[float]:
    try:
        return metric(pairs)
    except MetricError:
        return None


def _validate_sets(train_set: FeatureSet, val_set: FeatureSet, cfg: SalfConfig):
    if len(train_set) == 0:
        raise EmptySplit("Training split is empty")
    if len(val_set) == 0:
        raise EmptySplit("Validation split is empty")
    for label, fs in (("train", train_set), ("validation", val_set)):
        if fs.dims != cfg.input_dim:
            raise FeatureDimMismatch(
                f"{label} features have {fs.dims} dims, model input_dim is {cfg.input_dim}"
            )


def sgd_step(model: SalfModel, x: np.ndarray, y: np.ndarray, lr: float) -> float:
    """One train-mode forward/backward pass and update on prepared inputs."""
    tape = Tape()
    out = model.forward_network(x, training=True, tape=tape)
    loss = l1_loss(out, y[:, None], tape)
    tape.backward(loss)
    for p in model.parameters():
        if p.grad is not None:
            p.values = p.values - lr * p.grad
        p.zero_grad()
    return loss.item()


def fit(
    train_set: FeatureSet,
    val_set: FeatureSet,
    salf_cfg: SalfConfig,
    train_cfg: TrainConfig,
) -> Tuple[SalfModel, TrainHistory]:
    """
    Train a fresh model on prepared feature sets.

    Returns:
        The best-epoch model (standardizer embedded) and the history.

    Raises:
        EmptySplit: train or validation set is empty
        FeatureDimMismatch: feature width differs from ``salf_cfg.input_dim``
        TooFewSamples: standardization requested with fewer than 2 rows
        BatchTooSmall: the deepest stage has length 1 and a batch would hold
            a single utterance
    """
    _validate_sets(train_set, val_set, salf_cfg)
    merge_singleton = salf_cfg.stage_lengths()[-1] == 1
    if merge_singleton and min(train_cfg.batch_size, len(train_set)) == 1:
        raise BatchTooSmall(
            f"Depth {salf_cfg.depth} reduces {salf_cfg.input_dim} features to a "
            "single value per channel; batch norm there needs batch_size >= 2 "
            "and at least 2 training utterances"
        )

    model = build_model(salf_cfg, seed=train_cfg.seed)
    if train_cfg.standardize:
        model.standardizer = fit_standardizer(train_set.features)

    x_train = model.prepare(train_set.features)
    y_train = train_set.targets

    history = TrainHistory()
    best_mse = np.inf
    best_snapshot = model.snapshot()
    stale = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        if train_cfg.shuffle_each_epoch:
            order = np.random.default_rng([train_cfg.seed, epoch]).permutation(
                len(train_set)
            )
        else:
            order = np.arange(len(train_set))

        total = 0.0
        for batch in _batches(order, train_cfg.batch_size, merge_singleton):
            loss = sgd_step(
                model, x_train[batch], y_train[batch], train_cfg.learning_rate
            )
            total += loss * len(batch)
        train_l1 = total / len(train_set)

        pairs = ScorePairs(val_set.targets, model.predict_batch(val_set.features))
        record = EpochRecord(
            epoch=epoch,
            train_l1=train_l1,
            val_mse=mse(pairs),
            val_lcc=_quiet(lcc, pairs),
            val_srcc=_quiet(srcc, pairs),
            val_ktau=_quiet(ktau, pairs),
        )
        history.records.append(record)

        if record.val_mse < best_mse:
            best_mse = record.val_mse
            best_snapshot = model.snapshot()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1

        logger.info(
            f"Epoch {epoch}: train_l1={train_l1:.4f} val_mse={record.val_mse:.4f}"
            f"{' *' if stale == 0 else ''}"
        )

        if stale >= train_cfg.patience_epochs:
            history.stopped_early = True
            logger.info(
                f"Early stopping after epoch {epoch}: no improvement for "
                f"{train_cfg.patience_epochs} epochs, best epoch {history.best_epoch}"
            )
            break

    model.restore(best_snapshot)
    model.round_to_float32()
    return model, history


@dataclass
class TrainResult:
    """Outcome of a full manifest-level training run."""

    model: SalfModel
    history: TrainHistory
    split: DataSplit
    features: FeatureSet

    def split_set(self, name: str) -> FeatureSet:
        return self.features.subset(getattr(self.split, name))


def train(
    manifest: Manifest,
    salf_cfg: SalfConfig,
    train_cfg: TrainConfig,
    cepstral: Optional[CepstralConfig] = None,
    workers: int = 4,
    features: Optional[FeatureSet] = None,
    split: Optional[DataSplit] = None,
) -> TrainResult:
    """
    Split the manifest 8:1:1, resolve features and fit.

    ``features`` and ``split`` may be supplied to reuse resolved vectors and
    a shared split across runs (ablation sweeps).
    """
    split = split or split_ids(manifest.ids, train_cfg.seed)
    if features is None:
        features = resolve_feature_set(
            manifest, salf_cfg.feature_kind, cepstral, workers=workers
        )
    logger.info(
        f"Training depth-{salf_cfg.depth} model on {salf_cfg.feature_kind.value} "
        f"features, split {split.sizes[0]}/{split.sizes[1]}/{split.sizes[2]}"
    )
    model, history = fit(
        features.subset(split.train),
        features.subset(split.val),
        salf_cfg,
        train_cfg,
    )
    return TrainResult(model, history, split, features)
