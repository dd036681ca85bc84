"""
Cepstral Extractors - MFCC and LFCC computed from audio

Audio is read, resampled to 16 kHz and passed through the cepstral
pipeline in core.features. An utterance without audio but with a feature
file of the same kind (for example one written by ``salfmos features``)
is served from that file.
"""

from abc import abstractmethod

from core.audio_io import AudioBuffer, read_wav_file, resample
from core.config import WORKING_RATE, FeatureKind
from core.errors import KindMismatch, MissingPath
from core.extractor_loader import BaseExtractor
from core.features import FeatureMatrix, lfcc, mfcc, read_feature_file


class CepstralExtractor(BaseExtractor):
    @property
    def needs_audio(self) -> bool:
        return True

    @abstractmethod
    def compute(self, buf: AudioBuffer) -> FeatureMatrix:
        """Cepstral matrix for a 16 kHz buffer."""

    def extract(self, utterance) -> FeatureMatrix:
        if utterance.audio_path is not None:
            buf = resample(read_wav_file(utterance.audio_path), WORKING_RATE)
            return self.compute(buf)

        if utterance.feature_path is not None:
            fm = read_feature_file(utterance.feature_path)
            if fm.source_kind != self.kind:
                raise KindMismatch(
                    f"{utterance.id}: feature file holds {fm.source_kind.value}, "
                    f"requested {self.kind.value}"
                )
            return fm

        raise MissingPath(f"{utterance.id}: {self.kind.value} needs an audio path")


class MfccExtractor(CepstralExtractor):
    @property
    def kind(self) -> FeatureKind:
        return FeatureKind.MFCC

    @property
    def description(self) -> str:
        return "Mel-frequency cepstral coefficients computed from WAV audio"

    def compute(self, buf: AudioBuffer) -> FeatureMatrix:
        return mfcc(buf, self.cepstral)


class LfccExtractor(CepstralExtractor):
    @property
    def kind(self) -> FeatureKind:
        return FeatureKind.LFCC

    @property
    def description(self) -> str:
        return "Linear-frequency cepstral coefficients computed from WAV audio"

    def compute(self, buf: AudioBuffer) -> FeatureMatrix:
        return lfcc(buf, self.cepstral)
