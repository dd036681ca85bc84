"""
Errors - Exception hierarchy for the SALF-MOS toolkit

Library code raises these; the CLI and the HTTP service are the only
places that translate them into exit codes or status codes.
"""

from typing import Optional


class SalfError(Exception):
    """Base class for every toolkit error."""


class IoFailure(SalfError, OSError):
    """A file could not be read or written, or a binary payload was truncated."""


# Audio


class AudioError(SalfError, ValueError):
    """Invalid or unsupported audio input."""


class MalformedHeader(AudioError):
    """Input is not a well-formed RIFF/WAVE container."""


class UnsupportedEncoding(AudioError):
    """WAV encoding other than PCM16 / float-32 mono or stereo."""


class EmptyAudio(AudioError):
    """WAV file carries zero samples."""


# Features


class FeatureError(SalfError, ValueError):
    """Feature extraction failed."""


class TooShort(FeatureError):
    """Fewer samples than one analysis frame."""


class RateMismatch(FeatureError):
    """Audio is not at the working sample rate."""


class KindMismatch(FeatureError):
    """Feature source kind differs from the requested or expected kind."""


class FeatureFileError(SalfError, ValueError):
    """SALF-F1 feature file could not be decoded."""


class BadMagic(FeatureFileError):
    """Leading magic bytes do not identify the expected format."""


class DimMismatch(FeatureFileError):
    """Header dimensions disagree with the payload size."""


class NonFiniteValues(FeatureFileError):
    """Payload carries NaN or infinite values."""


# Autodiff


class AutodiffError(SalfError, ValueError):
    """Invalid use of the differentiation engine."""


class ShapeMismatch(AutodiffError):
    """Operand shapes are incompatible."""


class DegenerateBatch(AutodiffError):
    """Batch normalization in train mode needs at least two values per channel."""


class OddLength(AutodiffError):
    """Pairwise pooling needs an even length."""


class NotScalar(AutodiffError):
    """Backward was started from a non-scalar tensor."""


class NotOnTape(AutodiffError):
    """Backward was started from a tensor the tape did not record."""


# Model / checkpoints


class ModelError(SalfError, ValueError):
    """Invalid model configuration."""


class BadConfig(ModelError):
    """Configuration violates the architecture's constraints."""


class CheckpointError(SalfError, ValueError):
    """SALF-C1 checkpoint could not be decoded."""


class CheckpointMagic(CheckpointError, BadMagic):
    """Checkpoint does not start with the SALF-C1 magic."""


class VersionUnsupported(CheckpointError):
    """Checkpoint format version is not understood."""


class ConfigMismatch(CheckpointError):
    """Checkpoint config is invalid or differs from what the caller expects."""


# Training


class TrainingError(SalfError, ValueError):
    """Training could not run on the given data."""


class TooFewUtterances(TrainingError):
    """Not enough utterances for an 8:1:1 split."""


class TooFewSamples(TrainingError):
    """Not enough training rows to fit a standardizer."""


class FeatureDimMismatch(TrainingError):
    """Utterance feature vectors disagree in length."""


class EmptySplit(TrainingError):
    """A split needed for training has no utterances."""


class BatchTooSmall(TrainingError):
    """Batches of one cannot be normalized at the deepest stage."""


# Metrics


class MetricError(SalfError, ValueError):
    """A metric is undefined for the given scores."""


class LengthMismatch(MetricError):
    """Actual and predicted vectors differ in length."""


class ConstantInput(MetricError):
    """Correlation is undefined because one vector is constant."""


class AllTied(MetricError):
    """Kendall correlation is undefined because every pair is tied."""


# Dataset


class DatasetError(SalfError, ValueError):
    """Manifest content is invalid."""


class ParseError(DatasetError):
    """A manifest line could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateId(DatasetError):
    """Two manifest rows share an utterance id."""


class MosOutOfRange(DatasetError):
    """MOS label outside the 1-5 scale."""


class MissingPath(DatasetError):
    """Utterance has neither an audio path nor a feature path."""
