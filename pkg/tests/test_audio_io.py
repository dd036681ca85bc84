import struct

import numpy as np
import pytest

from core.audio_io import AudioBuffer, read_wav, resample, write_wav
from core.errors import EmptyAudio, MalformedHeader, UnsupportedEncoding
from tests.conftest import tone


def _wav(code: int, channels: int, rate: int, bits: int, payload: bytes) -> bytes:
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", code, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_pcm16_scaling():
    payload = np.array([0, 16384, -16384, 32767], dtype="<i2").tobytes()
    buf = read_wav(_wav(1, 1, 8000, 16, payload))
    assert buf.sample_rate == 8000
    np.testing.assert_array_equal(buf.samples, [0.0, 0.5, -0.5, 32767 / 32768])


def test_stereo_float_is_averaged():
    payload = np.array([[0.2, 0.2], [0.4, 0.0]], dtype="<f4").tobytes()
    buf = read_wav(_wav(3, 2, 16000, 32, payload))
    np.testing.assert_allclose(buf.samples, [0.2, 0.2], atol=1e-7)


def test_float_samples_are_clipped():
    payload = np.array([1.5, -2.0, 0.25], dtype="<f4").tobytes()
    buf = read_wav(_wav(3, 1, 16000, 32, payload))
    np.testing.assert_array_equal(buf.samples, [1.0, -1.0, 0.25])


def test_truncated_header():
    data = _wav(1, 1, 8000, 16, b"\x00\x00" * 4)
    with pytest.raises(MalformedHeader):
        read_wav(data[:10])
    with pytest.raises(MalformedHeader):
        read_wav(data[:30])


def test_not_riff():
    with pytest.raises(MalformedHeader):
        read_wav(b"OggS" + b"\x00" * 40)


def test_unsupported_encodings():
    with pytest.raises(UnsupportedEncoding):
        read_wav(_wav(1, 1, 8000, 24, b"\x00" * 6))
    with pytest.raises(UnsupportedEncoding):
        read_wav(_wav(1, 3, 8000, 16, b"\x00" * 6))
    with pytest.raises(UnsupportedEncoding):
        read_wav(_wav(85, 1, 8000, 16, b"\x00" * 6))


def test_empty_audio():
    with pytest.raises(EmptyAudio):
        read_wav(_wav(1, 1, 8000, 16, b""))


def test_skips_unknown_chunks():
    payload = np.array([100, -100], dtype="<i2").tobytes()
    data = _wav(1, 1, 8000, 16, payload)
    # Insert an odd-sized LIST chunk (padded to even) before fmt
    extra = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\x00"
    data = data[:12] + extra + data[12:]
    data = data[:4] + struct.pack("<I", len(data) - 8) + data[8:]
    buf = read_wav(data)
    np.testing.assert_array_equal(buf.samples, [100 / 32768, -100 / 32768])


def test_pcm16_write_read_roundtrip():
    rng = np.random.default_rng(3)
    samples = rng.integers(-32768, 32768, size=257) / 32768.0
    buf = AudioBuffer(samples, 11025)
    back = read_wav(write_wav(buf, "pcm16"))
    assert back.sample_rate == 11025
    np.testing.assert_array_equal(back.samples, buf.samples)


def test_resample_identity_is_bit_exact():
    buf = tone(300.0, 16000, 0.1)
    out = resample(buf, 16000)
    assert out.sample_rate == 16000
    np.testing.assert_array_equal(out.samples, buf.samples)


def test_resample_length_and_silence():
    silence = AudioBuffer(np.zeros(44100), 44100)
    out = resample(silence, 16000)
    assert len(out) == 16000
    assert np.all(np.abs(out.samples) < 1e-6)

    odd = AudioBuffer(np.zeros(1001), 22050)
    assert len(resample(odd, 16000)) == round(1001 * 16000 / 22050)


def test_resampled_tone_peak():
    out = resample(tone(440.0, 48000), 16000)
    spectrum = np.abs(np.fft.rfft(out.samples[:4096]))
    peak_hz = np.argmax(spectrum) * 16000 / 4096
    assert abs(peak_hz - 440.0) <= 16000 / 4096


@pytest.mark.parametrize("freq", [100.0, 1000.0, 3000.0, 6500.0])
@pytest.mark.parametrize("source", [22050, 44100, 48000, 8000])
def test_resampling_preserves_rms(freq, source):
    if freq >= source / 2 * 0.9:
        pytest.skip("tone above source passband")
    buf = tone(freq, source, amplitude=0.9)
    out = resample(buf, 16000)
    # Ignore filter edge effects
    trim = 400
    rms_in = np.sqrt(np.mean(buf.samples**2))
    rms_out = np.sqrt(np.mean(out.samples[trim:-trim] ** 2))
    assert abs(rms_out - rms_in) / rms_in < 0.05


def test_audio_buffer_invariants():
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]), 16000)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(4), 0)
