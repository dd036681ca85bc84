"""
Audio I/O - WAV parsing and resampling to the working rate

Decodes RIFF/WAVE containers (PCM16 or float-32, mono or stereo) into
normalized mono buffers and converts them to 16 kHz with a polyphase
Kaiser-windowed sinc filter. No silence trimming or loudness
normalization is applied.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy import signal

from .config import WORKING_RATE
from .errors import EmptyAudio, IoFailure, MalformedHeader, UnsupportedEncoding

logger = logging.getLogger(__name__)

FORMAT_PCM = 1
FORMAT_FLOAT = 3
PCM16_SCALE = 32768.0

TAPS_PER_PHASE = 64
KAISER_BETA = 8.6


@dataclass(frozen=True)
class AudioBuffer:
    """Mono samples in [-1, 1] at a positive integer sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(
                f"AudioBuffer needs 1-D samples, got shape {samples.shape}"
            )
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _parse_fmt(chunk: bytes) -> tuple:
    if len(chunk) < 16:
        raise MalformedHeader(f"fmt chunk too short ({len(chunk)} bytes)")
    code, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", chunk)
    return code, channels, rate, block_align, bits


def read_wav(data: bytes) -> AudioBuffer:
    """
    Decode a WAV byte string into a mono AudioBuffer.

    PCM16 is divided by 32768; float-32 is clipped to [-1, 1]; stereo frames
    are averaged to mono.

    Raises:
        MalformedHeader: not RIFF/WAVE, or chunks are truncated
        UnsupportedEncoding: anything but PCM16 / float-32 with 1-2 channels
        EmptyAudio: the data chunk holds no frames
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader("Not a RIFF/WAVE container")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (size,) = struct.unpack_from("<I", data, offset + 4)
        body_start = offset + 8
        body = data[body_start : body_start + size]

        if chunk_id == b"fmt ":
            if len(body) < size:
                raise MalformedHeader("fmt chunk is truncated")
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            if fmt is None:
                raise MalformedHeader("data chunk precedes fmt chunk")
            if len(body) < size:
                logger.warning(
                    f"data chunk declares {size} bytes but only {len(body)} remain"
                )
            payload = body
            break

        # Chunks are word aligned
        offset = body_start + size + (size & 1)

    if fmt is None:
        raise MalformedHeader("Missing fmt chunk")
    if payload is None:
        raise MalformedHeader("Missing data chunk")

    code, channels, rate, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels (only mono/stereo supported)")
    if rate <= 0:
        raise MalformedHeader("Sample rate must be positive")

    if code == FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif code == FORMAT_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedEncoding(f"format code {code} with {bits}-bit samples")

    frame_bytes = dtype.itemsize * channels
    frames = len(payload) // frame_bytes
    if frames == 0:
        raise EmptyAudio("WAV data chunk contains no samples")

    raw = np.frombuffer(payload[: frames * frame_bytes], dtype=dtype).reshape(
        frames, channels
    )
    if code == FORMAT_PCM:
        samples = raw.astype(np.float64) / PCM16_SCALE
    else:
        samples = raw.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise MalformedHeader("data chunk contains non-finite samples")
        samples = np.clip(samples, -1.0, 1.0)

    mono = samples[:, 0] if channels == 1 else samples.mean(axis=1)
    return AudioBuffer(samples=mono, sample_rate=int(rate))


def read_wav_file(path: Union[str, Path]) -> AudioBuffer:
    """Read and decode a WAV file from disk."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"Cannot read {path}: {e}") from e
    return read_wav(data)


def write_wav(buf: AudioBuffer, encoding: str = "pcm16") -> bytes:
    """Encode a mono buffer as a WAV byte string (``pcm16`` or ``float32``)."""
    if encoding == "pcm16":
        code, bits = FORMAT_PCM, 16
        scaled = np.round(buf.samples * PCM16_SCALE)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
    elif encoding == "float32":
        code, bits = FORMAT_FLOAT, 32
        payload = buf.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"Unknown WAV encoding: {encoding}")

    block_align = bits // 8
    fmt = struct.pack(
        "<HHIIHH",
        code,
        1,
        buf.sample_rate,
        buf.sample_rate * block_align,
        block_align,
        bits,
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav_file(buf: AudioBuffer, path: Union[str, Path], encoding: str = "pcm16"):
    try:
        Path(path).write_bytes(write_wav(buf, encoding))
    except OSError as e:
        raise IoFailure(f"Cannot write {path}: {e}") from e


def design_lowpass(up: int, down: int) -> np.ndarray:
    """
    Kaiser-windowed sinc prototype for a rational rate change up/down.

    The filter runs at the interpolated rate, spans 64 taps at the lower of
    the two rates, and cuts off at half the lower rate. Unity DC gain;
    resample_poly applies the interpolation gain itself.
    """
    factor = max(up, down)
    numtaps = TAPS_PER_PHASE * factor + 1
    taps = signal.firwin(numtaps, 1.0 / factor, window=("kaiser", KAISER_BETA))
    return taps


def resample(buf: AudioBuffer, target_rate: int = WORKING_RATE) -> AudioBuffer:
    """
    Band-limited polyphase resampling to ``target_rate``.

    Output length is round(len * target / source); equal rates return the
    samples unchanged.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return AudioBuffer(samples=buf.samples.copy(), sample_rate=buf.sample_rate)

    g = math.gcd(buf.sample_rate, target_rate)
    up, down = target_rate // g, buf.sample_rate // g
    out_len = int(round(len(buf) * target_rate / buf.sample_rate))

    taps = design_lowpass(up, down)
    out = signal.resample_poly(buf.samples, up, down, window=taps)

    if len(out) >= out_len:
        out = out[:out_len]
    else:
        out = np.pad(out, (0, out_len - len(out)))

    logger.debug(
        f"Resampled {len(buf)} samples {buf.sample_rate}->{target_rate} Hz "
        f"({len(taps)} taps)"
    )
    return AudioBuffer(samples=np.clip(out, -1.0, 1.0), sample_rate=target_rate)
