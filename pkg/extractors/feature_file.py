"""
Feature File Extractors - Ingest externally computed SALF-F1 features

wav2vec, x-vector and raw representations are produced by models outside
this toolkit; these extractors read them and check the stored kind.
"""

from core.config import FeatureKind
from core.errors import KindMismatch, MissingPath
from core.extractor_loader import BaseExtractor
from core.features import SSL_DIMS, FeatureMatrix, read_feature_file


class FeatureFileExtractor(BaseExtractor):
    """Reads ``utterance.feature_path``; the file's kind must match."""

    file_kind: FeatureKind = FeatureKind.RAW
    summary: str = "Externally computed features read from SALF-F1 files"

    @property
    def kind(self) -> FeatureKind:
        return self.file_kind

    @property
    def description(self) -> str:
        return self.summary

    def extract(self, utterance) -> FeatureMatrix:
        if utterance.feature_path is None:
            raise MissingPath(
                f"{utterance.id}: {self.kind.value} features need a feature path"
            )
        fm = read_feature_file(utterance.feature_path)
        if fm.source_kind != self.kind:
            raise KindMismatch(
                f"{utterance.id}: feature file holds {fm.source_kind.value}, "
                f"requested {self.kind.value}"
            )
        expected = SSL_DIMS.get(self.kind)
        if expected is not None and fm.dims != expected:
            self.logger.warning(
                f"{utterance.id}: {self.kind.value} features have {fm.dims} dims, "
                f"expected {expected}"
            )
        return fm


class Wav2vecExtractor(FeatureFileExtractor):
    file_kind = FeatureKind.WAV2VEC
    summary = "wav2vec frame embeddings (512-dim) read from SALF-F1 files"


class XvectorExtractor(FeatureFileExtractor):
    file_kind = FeatureKind.XVECTOR
    summary = "x-vector speaker embeddings (512-dim) read from SALF-F1 files"
