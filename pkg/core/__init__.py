"""
SALF-MOS - Core components

Audio I/O, feature extraction, the differentiation engine, the SALF-MOS
network, training, metrics, datasets and the inference service.
"""

from .config import CepstralConfig, FeatureKind, SalfConfig, TrainConfig
from .dataset import Manifest, Utterance, load_manifest
from .extractor_loader import ExtractorLoader
from .job_runner import JobRunner
from .metrics import EvalReport, evaluate
from .model import SalfModel, build_model, param_count
from .run_store import RunStore
from .training import TrainHistory, train

__all__ = [
    "CepstralConfig",
    "EvalReport",
    "ExtractorLoader",
    "FeatureKind",
    "JobRunner",
    "Manifest",
    "RunStore",
    "SalfConfig",
    "SalfModel",
    "TrainConfig",
    "TrainHistory",
    "Utterance",
    "build_model",
    "evaluate",
    "load_manifest",
    "param_count",
    "train",
]

__version__ = "0.1.0"
