"""
Dataset - Manifests, rating aggregation and feature resolution

A manifest is a UTF-8 CSV with header ``id,audio_path,feature_path,mos,ratings``
binding each utterance to its audio and/or precomputed feature file and to a
MOS label. Per-rater scores are pipe-separated; when present the label is
their unweighted mean. Relative paths resolve against the manifest's
directory.
"""

import asyncio
import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import CepstralConfig, FeatureKind
from .errors import (
    DuplicateId,
    FeatureDimMismatch,
    IoFailure,
    MissingPath,
    MosOutOfRange,
    ParseError,
)
from .extractor_loader import ExtractorLoader
from .features import mean_pool
from .job_runner import Job, JobRunner

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "audio_path", "feature_path", "mos", "ratings")
MOS_RANGE = (1.0, 5.0)
RATING_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Utterance:
    """One labelled recording."""

    id: str
    mos: float
    audio_path: Optional[Path] = None
    feature_path: Optional[Path] = None
    ratings: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise ParseError("Utterance id must be non-empty")
        if self.audio_path is None and self.feature_path is None:
            raise MissingPath(f"{self.id}: neither audio_path nor feature_path is set")
        lo, hi = MOS_RANGE
        if not lo <= self.mos <= hi:
            raise MosOutOfRange(f"{self.id}: MOS {self.mos} is outside [{lo}, {hi}]")
        if self.ratings is not None:
            if not self.ratings:
                raise ParseError(f"{self.id}: ratings list is empty")
            if abs(self.mos - float(np.mean(self.ratings))) >= RATING_TOLERANCE:
                raise MosOutOfRange(
                    f"{self.id}: MOS {self.mos} is not the mean of its ratings"
                )


@dataclass(frozen=True)
class Manifest:
    """Immutable, ordered collection of utterances with unique ids."""

    utterances: Tuple[Utterance, ...]
    dataset_name: str = "dataset"
    feature_kind: Optional[FeatureKind] = None

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise DuplicateId(f"Utterance id {u.id!r} appears more than once")
            seen.add(u.id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    @property
    def ids(self) -> List[str]:
        return [u.id for u in self.utterances]

    def by_id(self) -> Dict[str, Utterance]:
        return {u.id: u for u in self.utterances}

    def subset(self, ids: Sequence[str]) -> "Manifest":
        """Manifest restricted to ``ids``, in the order given."""
        index = self.by_id()
        missing = [i for i in ids if i not in index]
        if missing:
            raise KeyError(f"Unknown utterance ids: {missing[:5]}")
        return Manifest(
            tuple(index[i] for i in ids), self.dataset_name, self.feature_kind
        )

    def with_kind(self, kind: FeatureKind) -> "Manifest":
        return Manifest(self.utterances, self.dataset_name, FeatureKind(kind))


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{column} value {text!r} is not a number", line) from None
    if not np.isfinite(value):
        raise ParseError(f"{column} value {text!r} is not finite", line)
    return value


def _resolve(text: str, base: Path) -> Optional[Path]:
    text = text.strip()
    if not text:
        return None
    path = Path(text)
    return path if path.is_absolute() else base / path


def _parse_row(row: Dict[str, Optional[str]], line: int, base: Path) -> Utterance:
    if None in row:
        raise ParseError(f"expected {len(MANIFEST_COLUMNS)} columns, got more", line)
    if any(row[c] is None for c in MANIFEST_COLUMNS):
        raise ParseError(f"expected {len(MANIFEST_COLUMNS)} columns, got fewer", line)

    ratings_text = row["ratings"].strip()
    mos_text = row["mos"].strip()
    ratings = None
    if ratings_text:
        ratings = tuple(
            _parse_float(r.strip(), "ratings", line) for r in ratings_text.split("|")
        )
        mos = float(np.mean(ratings))
    elif mos_text:
        mos = _parse_float(mos_text, "mos", line)
    else:
        raise ParseError("row has neither mos nor ratings", line)

    utt_id = row["id"].strip()
    if not utt_id:
        raise ParseError("empty utterance id", line)
    try:
        return Utterance(
            id=utt_id,
            mos=mos,
            audio_path=_resolve(row["audio_path"], base),
            feature_path=_resolve(row["feature_path"], base),
            ratings=ratings,
        )
    except (MissingPath, MosOutOfRange) as e:
        raise type(e)(f"line {line}: {e}") from None


def load_manifest(
    path: Union[str, Path],
    feature_kind: Optional[FeatureKind] = None,
    dataset_name: Optional[str] = None,
) -> Manifest:
    """
    Parse and validate a manifest CSV.

    Raises:
        ParseError: bad header, column count or number (carries the line)
        DuplicateId: repeated utterance id
        MosOutOfRange: label outside [1, 5]
        MissingPath: row without audio_path and feature_path
        IoFailure: file cannot be read
    """
    path = Path(path)
    base = path.parent
    try:
        with open(path, "r", encoding="utf-8-sig", newline="") as f:
            reader = csv.DictReader(f)
            header = tuple(h.strip() for h in (reader.fieldnames or ()))
            if header != MANIFEST_COLUMNS:
                raise ParseError(
                    f"header must be {','.join(MANIFEST_COLUMNS)}, got {','.join(header)}",
                    1,
                )
            reader.fieldnames = list(MANIFEST_COLUMNS)

            utterances: List[Utterance] = []
            seen: Dict[str, int] = {}
            for row in reader:
                line = reader.line_num
                utt = _parse_row(row, line, base)
                if utt.id in seen:
                    raise DuplicateId(
                        f"line {line}: id {utt.id!r} already used on line {seen[utt.id]}"
                    )
                seen[utt.id] = line
                utterances.append(utt)
    except OSError as e:
        raise IoFailure(f"Cannot read manifest {path}: {e}") from e

    manifest = Manifest(
        tuple(utterances),
        dataset_name=dataset_name or path.stem,
        feature_kind=FeatureKind(feature_kind) if feature_kind is not None else None,
    )
    logger.info(f"Loaded {len(manifest)} utterances from {path}")
    return manifest


def _relative(path: Optional[Path], base: Path) -> str:
    if path is None:
        return ""
    try:
        return Path(os.path.relpath(path, base)).as_posix()
    except ValueError:
        # Different drive on Windows
        return str(path)


def write_manifest(manifest: Manifest, path: Union[str, Path]) -> None:
    """Write a manifest CSV; paths are stored relative to its directory."""
    path = Path(path)
    base = path.parent
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for u in manifest:
                writer.writerow(
                    [
                        u.id,
                        _relative(u.audio_path, base),
                        _relative(u.feature_path, base),
                        repr(u.mos),
                        "|".join(repr(r) for r in u.ratings) if u.ratings else "",
                    ]
                )
    except OSError as e:
        raise IoFailure(f"Cannot write manifest {path}: {e}") from e


# Feature resolution

_loader: Optional[ExtractorLoader] = None


def extractor_loader() -> ExtractorLoader:
    """Process-wide extractor registry, discovered on first use."""
    global _loader
    if _loader is None:
        _loader = ExtractorLoader()
    return _loader


def resolve_features(
    utterance: Utterance,
    kind: FeatureKind,
    cepstral: Optional[CepstralConfig] = None,
) -> np.ndarray:
    """
    Fixed-length feature vector for one utterance.

    mfcc/lfcc are computed from audio (read, resample to 16 kHz, extract);
    SSL kinds are read from SALF-F1 files. Matrices are mean-pooled over
    frames; a single-row matrix is returned as is.

    Raises:
        KindMismatch: feature file kind differs from ``kind``
        MissingPath: the path this kind needs is absent
    """
    extractor = extractor_loader().create(kind, cepstral)
    fm = extractor.extract(utterance)
    return mean_pool(fm)


@dataclass
class FeatureSet:
    """Pooled feature vectors with their labels, in utterance order."""

    ids: List[str]
    features: np.ndarray
    targets: np.ndarray
    kind: Optional[FeatureKind] = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if not (len(self.ids) == len(self.features) == len(self.targets)):
            raise FeatureDimMismatch(
                f"{len(self.ids)} ids, {len(self.features)} vectors and "
                f"{len(self.targets)} targets"
            )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, ids: Sequence[str]) -> "FeatureSet":
        position = {u: i for i, u in enumerate(self.ids)}
        rows = [position[i] for i in ids]
        return FeatureSet(
            list(ids), self.features[rows], self.targets[rows], self.kind
        )

    @classmethod
    def from_vectors(
        cls,
        ids: Sequence[str],
        vectors: Sequence[np.ndarray],
        targets: Sequence[float],
        kind: Optional[FeatureKind] = None,
    ) -> "FeatureSet":
        dims = {len(v) for v in vectors}
        if len(dims) > 1:
            raise FeatureDimMismatch(
                f"Feature vectors have differing lengths {sorted(dims)}"
            )
        return cls(list(ids), np.stack(vectors), np.asarray(targets), kind)


async def resolve_feature_set_async(
    manifest: Manifest,
    kind: FeatureKind,
    cepstral: Optional[CepstralConfig] = None,
    workers: int = 4,
) -> FeatureSet:
    """Resolve every utterance concurrently; order follows the manifest."""
    kind = FeatureKind(kind)
    runner = JobRunner(max_concurrent=workers)
    jobs = [
        Job(id=u.id, func=resolve_features, args=(u, kind, cepstral)) for u in manifest
    ]
    batch = await runner.run_batch(jobs)
    batch.raise_first()
    return FeatureSet.from_vectors(
        manifest.ids, batch.results, [u.mos for u in manifest], kind
    )


def resolve_feature_set(
    manifest: Manifest,
    kind: FeatureKind,
    cepstral: Optional[CepstralConfig] = None,
    workers: int = 4,
) -> FeatureSet:
    """Blocking form of :func:`resolve_feature_set_async`."""
    return asyncio.run(resolve_feature_set_async(manifest, kind, cepstral, workers))
