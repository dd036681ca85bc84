"""Shared synthetic fixtures: tones, WAV files and feature-file corpora."""

from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest

from core.audio_io import AudioBuffer, write_wav_file
from core.config import FeatureKind
from core.dataset import Manifest, Utterance, write_manifest
from core.features import FeatureMatrix, write_feature_file


def tone(freq: float, rate: int, seconds: float = 1.0, amplitude: float = 0.5):
    t = np.arange(int(round(rate * seconds))) / rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), rate)


def make_feature_corpus(
    root: Path,
    n: int,
    dims: int,
    kind: FeatureKind = FeatureKind.RAW,
    frames: int = 3,
    seed: int = 0,
    mos: Optional[List[float]] = None,
) -> Path:
    """Write ``n`` random SALF-F1 files plus a manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    feature_dir = root / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    labels = mos if mos is not None else list(np.round(rng.uniform(1, 5, n), 3))
    utterances = []
    for i in range(n):
        path = feature_dir / f"u{i:03d}.slf"
        data = rng.normal(size=(frames, dims)).astype(np.float32)
        write_feature_file(FeatureMatrix(data, kind), path)
        utterances.append(
            Utterance(id=f"u{i:03d}", mos=float(labels[i]), feature_path=path)
        )
    manifest_path = root / "manifest.csv"
    write_manifest(Manifest(tuple(utterances)), manifest_path)
    return manifest_path


@pytest.fixture
def feature_corpus(tmp_path):
    """20 utterances of 16-dim raw features."""
    return make_feature_corpus(tmp_path, n=20, dims=16)


@pytest.fixture
def wav_corpus(tmp_path):
    """Three 1 s tones at 22.05 kHz with a manifest referencing them relatively."""
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    lines = ["id,audio_path,feature_path,mos,ratings"]
    for i, freq in enumerate((220.0, 440.0, 880.0)):
        write_wav_file(tone(freq, 22050), audio_dir / f"t{i}.wav")
        lines.append(f"t{i},audio/t{i}.wav,,{2.0 + i},")
    manifest_path = tmp_path / "manifest.csv"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


@pytest.fixture(autouse=True)
def isolated_runs_dir(tmp_path, monkeypatch):
    """Keep experiment records out of the working tree."""
    monkeypatch.setenv("SALF_RUNS_DIR", str(tmp_path / "runs"))
