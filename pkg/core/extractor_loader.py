"""
Extractor Loader - Discovery of feature extractor plugins

Each feature source kind is served by one extractor class living in the
``extractors`` package. The loader imports every public module there and
registers the concrete BaseExtractor subclasses by kind.
"""

import importlib
import inspect
import logging
import pkgutil
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Type

from .config import CepstralConfig, FeatureKind
from .features import FeatureMatrix
from .errors import FeatureError


class BaseExtractor(ABC):
    """
    Abstract base class for feature extractors.

    An extractor turns one manifest utterance into a frames x dims
    FeatureMatrix of its kind. Extractors are stateless apart from their
    configuration and are safe to call from worker threads.
    """

    def __init__(self, cepstral: Optional[CepstralConfig] = None):
        self.cepstral = cepstral or CepstralConfig()
        self.logger = logging.getLogger(self.__class__.__name__)

    @property
    @abstractmethod
    def kind(self) -> FeatureKind:
        """Feature source kind this extractor produces."""

    @property
    @abstractmethod
    def description(self) -> str:
        """One-line description of the extractor."""

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def needs_audio(self) -> bool:
        """Whether the extractor computes features from WAV audio."""
        return False

    @property
    def metadata(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "code": self.kind.code,
            "description": self.description,
            "needs_audio": self.needs_audio,
        }

    @abstractmethod
    def extract(self, utterance) -> FeatureMatrix:
        """
        Produce the feature matrix for one utterance.

        Args:
            utterance: dataset.Utterance with resolved paths

        Returns:
            FeatureMatrix whose source_kind equals ``self.kind``
        """


class ExtractorLoader:
    """
    Registry of extractor classes discovered from a package.

    Modules whose name starts with an underscore are skipped; modules that
    fail to import are logged and skipped.
    """

    def __init__(self, package: str = "extractors"):
        self.package = package
        self.loaded: Dict[FeatureKind, Type[BaseExtractor]] = {}
        self.logger = logging.getLogger(__name__)
        self.discover()

    def discover(self) -> None:
        """Import every module of the package and register its extractors."""
        self.logger.debug(f"Discovering extractors in {self.package}")
        root = importlib.import_module(self.package)

        for info in pkgutil.iter_modules(root.__path__):
            if info.name.startswith("_"):
                continue
            module_name = f"{self.package}.{info.name}"
            try:
                module = importlib.import_module(module_name)
            except Exception as e:
                self.logger.error(f"Failed to load extractors from {module_name}: {e}")
                continue

            for _, obj in inspect.getmembers(module, inspect.isclass):
                if (
                    issubclass(obj, BaseExtractor)
                    and obj is not BaseExtractor
                    and not inspect.isabstract(obj)
                ):
                    kind = obj().kind
                    if kind in self.loaded and self.loaded[kind] is not obj:
                        self.logger.warning(
                            f"{obj.__name__} overrides {self.loaded[kind].__name__} "
                            f"for {kind.value}"
                        )
                    self.loaded[kind] = obj
                    self.logger.debug(f"Loaded extractor: {kind.value}")

    def get(self, kind: FeatureKind) -> Type[BaseExtractor]:
        kind = FeatureKind(kind)
        try:
            return self.loaded[kind]
        except KeyError:
            raise FeatureError(f"No extractor registered for {kind.value}") from None

    def create(
        self, kind: FeatureKind, cepstral: Optional[CepstralConfig] = None
    ) -> BaseExtractor:
        return self.get(kind)(cepstral)

    def list_extractors(self) -> List[Dict[str, Any]]:
        """Metadata of every registered extractor, ordered by kind code."""
        return [
            self.loaded[kind]().metadata
            for kind in sorted(self.loaded, key=lambda k: k.code)
        ]
