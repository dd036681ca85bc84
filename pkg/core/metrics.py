"""
Metrics - MSE, LCC, SRCC and KTAU for MOS prediction

Undefined correlations raise ConstantInput / AllTied; the report layer turns
them into ``None`` so a degenerate predictor still yields an MSE.
"""

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import AllTied, ConstantInput, IoFailure, LengthMismatch, MetricError

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ("utterance_id", "actual", "predicted")
METRIC_NAMES = ("mse", "lcc", "srcc", "ktau", "ktau_b")


class KtauVariant(str, Enum):
    """``untied`` drops tied pairs from C and D; ``tau_b`` applies the tie correction."""

    UNTIED = "untied"
    TAU_B = "tau_b"


@dataclass(frozen=True)
class ScorePairs:
    """Actual (X) and predicted (Y) scores of the same utterances."""

    actual: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        actual = np.asarray(self.actual, dtype=np.float64).reshape(-1)
        predicted = np.asarray(self.predicted, dtype=np.float64).reshape(-1)
        if len(actual) != len(predicted):
            raise LengthMismatch(
                f"{len(actual)} actual scores vs {len(predicted)} predictions"
            )
        if len(actual) == 0:
            raise MetricError("Metrics need at least one score pair")
        if not (np.all(np.isfinite(actual)) and np.all(np.isfinite(predicted))):
            raise MetricError("Scores must be finite")
        object.__setattr__(self, "actual", actual)
        object.__setattr__(self, "predicted", predicted)

    @property
    def n(self) -> int:
        return len(self.actual)


def _require_variation(p: ScorePairs, metric: str) -> None:
    if p.n < 2:
        raise ConstantInput(f"{metric} needs at least two score pairs")
    for label, values in (("actual", p.actual), ("predicted", p.predicted)):
        if np.ptp(values) == 0:
            raise ConstantInput(f"{metric} is undefined: {label} scores are constant")


def mse(p: ScorePairs) -> float:
    """(1/n) * sum (X_i - Y_i)^2."""
    diff = p.actual - p.predicted
    return float(np.mean(diff * diff))


def lcc(p: ScorePairs) -> float:
    """Pearson linear correlation in its raw-sum product-moment form."""
    _require_variation(p, "LCC")
    x, y, n = p.actual, p.predicted, p.n
    numerator = n * np.sum(x * y) - np.sum(x) * np.sum(y)
    denominator = np.sqrt(
        (n * np.sum(x * x) - np.sum(x) ** 2) * (n * np.sum(y * y) - np.sum(y) ** 2)
    )
    if not denominator > 0:
        raise ConstantInput("LCC is undefined: zero variance")
    return float(np.clip(numerator / denominator, -1.0, 1.0))


def srcc(p: ScorePairs) -> float:
    """Spearman correlation: Pearson correlation of average ranks."""
    _require_variation(p, "SRCC")
    rho = stats.spearmanr(p.actual, p.predicted)[0]
    if not np.isfinite(rho):
        raise ConstantInput("SRCC is undefined for these scores")
    return float(rho)


def _pair_counts(x: np.ndarray, y: np.ndarray) -> tuple:
    concordant = discordant = 0
    for i in range(len(x) - 1):
        sign = np.sign(x[i + 1 :] - x[i]) * np.sign(y[i + 1 :] - y[i])
        concordant += int(np.count_nonzero(sign > 0))
        discordant += int(np.count_nonzero(sign < 0))
    return concordant, discordant


def ktau(
    p: ScorePairs, variant: Union[KtauVariant, str] = KtauVariant.UNTIED
) -> float:
    """
    Kendall rank correlation.

    The default variant is (C - D) / (C + D) with pairs tied in either
    vector excluded from both counts.

    Raises:
        AllTied: no pair is untied in both vectors
        ConstantInput: tau_b requested and a vector is constant
    """
    variant = KtauVariant(variant)
    if p.n < 2:
        raise AllTied("KTAU needs at least two score pairs")

    if variant == KtauVariant.UNTIED:
        concordant, discordant = _pair_counts(p.actual, p.predicted)
        if concordant + discordant == 0:
            raise AllTied("KTAU is undefined: every pair is tied")
        return (concordant - discordant) / (concordant + discordant)

    _require_variation(p, "KTAU (tau-b)")
    tau = stats.kendalltau(p.actual, p.predicted, variant="b")[0]
    if not np.isfinite(tau):
        raise AllTied("KTAU (tau-b) is undefined for these scores")
    return float(tau)


@dataclass
class EvalReport:
    """The four metrics (plus tau-b) and the per-utterance predictions."""

    ids: List[str]
    actual: np.ndarray
    predicted: np.ndarray
    mse: float
    lcc: Optional[float]
    srcc: Optional[float]
    ktau: Optional[float]
    ktau_b: Optional[float]

    def __len__(self) -> int:
        return len(self.ids)

    def metrics(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def summary_line(self) -> str:
        return "# " + ",".join(
            f"{name}={_cell(value)}" for name, value in self.metrics().items()
        )

    def write_csv(self, path: Union[str, Path]) -> None:
        """Per-utterance rows, then a ``# mse=...`` summary comment line."""
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(EVAL_COLUMNS)
                for utt_id, a, p in zip(self.ids, self.actual, self.predicted):
                    writer.writerow([utt_id, repr(float(a)), repr(float(p))])
                f.write(self.summary_line() + "\n")
        except OSError as e:
            raise IoFailure(f"Cannot write evaluation CSV {path}: {e}") from e


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _defined(metric, *args) -> Optional[float]:
    try:
        return metric(*args)
    except (ConstantInput, AllTied) as e:
        logger.warning(f"{e}; reporting as undefined")
        return None


def summarize(
    actual: Sequence[float],
    predicted: Sequence[float],
    ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    """Build a report from score vectors; undefined correlations become None."""
    pairs = ScorePairs(np.asarray(actual), np.asarray(predicted))
    if ids is None:
        ids = [str(i) for i in range(pairs.n)]
    if len(ids) != pairs.n:
        raise LengthMismatch(f"{len(ids)} ids for {pairs.n} score pairs")
    return EvalReport(
        ids=list(ids),
        actual=pairs.actual,
        predicted=pairs.predicted,
        mse=mse(pairs),
        lcc=_defined(lcc, pairs),
        srcc=_defined(srcc, pairs),
        ktau=_defined(ktau, pairs, KtauVariant.UNTIED),
        ktau_b=_defined(ktau, pairs, KtauVariant.TAU_B),
    )


def evaluate(model, split) -> EvalReport:
    """
    Score a split with a model.

    Args:
        model: SalfModel; predictions are eval-mode and clamped
        split: dataset.FeatureSet with raw (unstandardized) features

    Returns:
        EvalReport over (label, prediction) pairs in split order
    """
    if len(split) == 0:
        raise MetricError("Cannot evaluate an empty split")
    predicted = model.predict_batch(split.features)
    return summarize(split.targets, predicted, split.ids)
