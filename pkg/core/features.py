"""
Features - Cepstral extraction, temporal pooling and the SALF-F1 file format

MFCC and LFCC are computed natively; SSL features (wav2vec, x-vector) are
produced elsewhere and ingested through SALF-F1 files.
"""

import logging
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np
from scipy import fft, signal

from .audio_io import AudioBuffer
from .config import WORKING_RATE, CepstralConfig, FeatureKind
from .errors import (
    BadMagic,
    DimMismatch,
    IoFailure,
    NonFiniteValues,
    RateMismatch,
    TooShort,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"SLF1"
_HEADER = struct.Struct("<4sBII")

SSL_DIMS = {FeatureKind.WAV2VEC: 512, FeatureKind.XVECTOR: 512}


@dataclass(frozen=True)
class FeatureMatrix:
    """Frames x dims matrix produced by any feature extractor."""

    data: np.ndarray
    source_kind: FeatureKind

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"FeatureMatrix needs frames, dims >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("FeatureMatrix entries must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "source_kind", FeatureKind(self.source_kind))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


# Filterbanks


def hz_to_mel(hz):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def _triangular_filters(edges_hz: np.ndarray, fft_size: int, sample_rate: int):
    """Triangles over FFT bins; each row is scaled so its peak weight is 1."""
    bin_hz = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    num_filters = len(edges_hz) - 2
    bank = np.zeros((num_filters, len(bin_hz)))

    for m in range(num_filters):
        left, center, right = edges_hz[m : m + 3]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
        peak = bank[m].max()
        if peak > 0:
            bank[m] /= peak
        else:
            # Narrower than one bin: put the whole filter on the nearest bin
            bank[m, int(np.argmin(np.abs(bin_hz - center)))] = 1.0
    return bank


def mel_filterbank(cfg: CepstralConfig, sample_rate: int = WORKING_RATE) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale."""
    low, high = hz_to_mel(cfg.low_hz), hz_to_mel(cfg.upper_edge(sample_rate))
    mels = np.linspace(low, high, cfg.num_filters + 2)
    return _triangular_filters(mel_to_hz(mels), cfg.fft_size, sample_rate)


def linear_filterbank(
    cfg: CepstralConfig, sample_rate: int = WORKING_RATE
) -> np.ndarray:
    """Triangular filters equally spaced in Hz."""
    edges = np.linspace(cfg.low_hz, cfg.upper_edge(sample_rate), cfg.num_filters + 2)
    return _triangular_filters(edges, cfg.fft_size, sample_rate)


@lru_cache(maxsize=16)
def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix B with y = B @ x."""
    basis = fft.dct(np.eye(n), type=2, norm="ortho", axis=0)
    basis.setflags(write=False)
    return basis


# Cepstral pipeline


def _frame(samples: np.ndarray, frame_len: int, hop_len: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(samples, frame_len)
    return windows[::hop_len]


def _cepstrum(
    buf: AudioBuffer, cfg: CepstralConfig, bank: np.ndarray, kind: FeatureKind
) -> FeatureMatrix:
    if buf.sample_rate != WORKING_RATE:
        raise RateMismatch(
            f"{kind.value} expects {WORKING_RATE} Hz audio, got {buf.sample_rate} Hz"
        )
    frame_len = cfg.frame_length(buf.sample_rate)
    hop_len = cfg.hop_length(buf.sample_rate)
    if len(buf) < frame_len:
        raise TooShort(
            f"{len(buf)} samples is shorter than one {frame_len}-sample frame"
        )

    x = buf.samples
    emphasized = np.append(x[0], x[1:] - cfg.pre_emphasis * x[:-1])

    frames = _frame(emphasized, frame_len, hop_len)
    window = signal.get_window(cfg.window, frame_len)
    power = np.abs(fft.rfft(frames * window, n=cfg.fft_size)) ** 2 / cfg.fft_size

    energies = np.log(np.maximum(power @ bank.T, cfg.floor))
    coeffs = energies @ dct_basis(cfg.num_filters)[: cfg.num_coeffs].T
    return FeatureMatrix(data=coeffs, source_kind=kind)


def mfcc(buf: AudioBuffer, cfg: CepstralConfig = CepstralConfig()) -> FeatureMatrix:
    """
    Mel-frequency cepstral coefficients.

    Pre-emphasis, framing, Hann window, power spectrum, HTK mel filterbank,
    floored log and orthonormal DCT-II; frames = 1 + (N - frame) // hop.
    """
    return _cepstrum(buf, cfg, mel_filterbank(cfg, buf.sample_rate), FeatureKind.MFCC)


def lfcc(buf: AudioBuffer, cfg: CepstralConfig = CepstralConfig()) -> FeatureMatrix:
    """Linear-frequency cepstral coefficients (same pipeline, linear filterbank)."""
    return _cepstrum(
        buf, cfg, linear_filterbank(cfg, buf.sample_rate), FeatureKind.LFCC
    )


def mean_pool(fm: FeatureMatrix) -> np.ndarray:
    """Average over frames; output length equals ``fm.dims``."""
    return fm.data.mean(axis=0, dtype=np.float64)


# SALF-F1 feature files


def encode_feature_matrix(fm: FeatureMatrix) -> bytes:
    rows, cols = fm.data.shape
    header = _HEADER.pack(FEATURE_MAGIC, fm.source_kind.code, rows, cols)
    return header + np.ascontiguousarray(fm.data, dtype="<f4").tobytes()


def decode_feature_matrix(data: bytes) -> FeatureMatrix:
    """
    Decode SALF-F1 bytes.

    Raises:
        BadMagic: leading bytes are not ``SLF1`` or the kind code is unknown
        DimMismatch: rows x cols disagrees with the payload size
        NonFiniteValues: payload holds NaN or infinite values
    """
    if data[:4] != FEATURE_MAGIC:
        raise BadMagic(f"Expected magic {FEATURE_MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < _HEADER.size:
        raise DimMismatch("Truncated SALF-F1 header")
    _, kind_code, rows, cols = _HEADER.unpack_from(data)
    try:
        kind = FeatureKind.from_code(kind_code)
    except ValueError as e:
        raise BadMagic(str(e)) from e

    payload = data[_HEADER.size :]
    expected = rows * cols * 4
    if rows == 0 or cols == 0 or len(payload) != expected:
        raise DimMismatch(
            f"Header declares {rows}x{cols} floats ({expected} bytes), "
            f"payload has {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValues(f"Non-finite values in {rows}x{cols} SALF-F1 payload")
    return FeatureMatrix(data=values.astype(np.float32), source_kind=kind)


def write_feature_file(fm: FeatureMatrix, path: Union[str, Path]) -> None:
    try:
        Path(path).write_bytes(encode_feature_matrix(fm))
    except OSError as e:
        raise IoFailure(f"Cannot write feature file {path}: {e}") from e


def read_feature_file(path: Union[str, Path]) -> FeatureMatrix:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"Cannot read feature file {path}: {e}") from e
    fm = decode_feature_matrix(data)
    logger.debug(f"Read {fm.source_kind.value} features {fm.data.shape} from {path}")
    return fm
