"""
Run Store - Persistence for experiment records

Each training or ablation run leaves a record of its configuration,
standardization flag, split sizes, best epoch and test metrics. Records
are kept apart from checkpoints and history CSVs, which must stay
byte-deterministic; records carry timestamps.
"""

import logging
from abc import ABC, abstractmethod
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import orjson
import yaml


class RunStore(ABC):
    """Abstract base class for experiment-record backends."""

    @abstractmethod
    def save(self, key: str, data: Dict[str, Any]) -> bool:
        """
        Persist a record.

        Args:
            key: Unique run identifier
            data: JSON/YAML-serializable record

        Returns:
            True if successful, False otherwise
        """

    @abstractmethod
    def load(self, key: str) -> Optional[Dict[str, Any]]:
        """Return the record for ``key`` or None."""

    @abstractmethod
    def delete(self, key: str) -> bool:
        """Delete a record; False if it did not exist."""

    @abstractmethod
    def exists(self, key: str) -> bool:
        """Check whether a record exists."""

    @abstractmethod
    def list_keys(self) -> List[str]:
        """All stored run identifiers."""


def new_run_key(command: str) -> str:
    """Timestamped key such as ``train-20240101T120000123456``."""
    return f"{command}-{datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%S%f')}"


class YAMLRunStore(RunStore):
    """One YAML file per run under ``base_path``."""

    def __init__(self, base_path: Union[str, Path] = "./runs"):
        self.base_path = Path(base_path)
        self.base_path.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(__name__)

    def _get_file_path(self, key: str) -> Path:
        safe_key = key.replace("/", "_").replace("\\", "_")
        return self.base_path / f"{safe_key}.yaml"

    def save(self, key: str, data: Dict[str, Any]) -> bool:
        try:
            with open(self._get_file_path(key), "w") as f:
                yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
            self.logger.debug(f"Saved run record {key}")
            return True
        except (OSError, yaml.YAMLError) as e:
            self.logger.error(f"Failed to save run record {key}: {e}")
            return False

    def load(self, key: str) -> Optional[Dict[str, Any]]:
        file_path = self._get_file_path(key)
        if not file_path.exists():
            return None
        try:
            with open(file_path, "r") as f:
                return yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            self.logger.error(f"Failed to load run record {key}: {e}")
            return None

    def delete(self, key: str) -> bool:
        file_path = self._get_file_path(key)
        if file_path.exists():
            file_path.unlink()
            return True
        return False

    def exists(self, key: str) -> bool:
        return self._get_file_path(key).exists()

    def list_keys(self) -> List[str]:
        return sorted(f.stem for f in self.base_path.glob("*.yaml"))


class JSONRunStore(RunStore):
    """All runs in a single orjson-encoded file."""

    def __init__(self, file_path: Union[str, Path] = "./runs/runs.json"):
        self.file_path = Path(file_path)
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(__name__)
        self._data: Dict[str, Any] = {}
        self._load_all()

    def _load_all(self) -> None:
        if self.file_path.exists():
            try:
                self._data = orjson.loads(self.file_path.read_bytes())
            except (OSError, orjson.JSONDecodeError) as e:
                self.logger.error(f"Failed to load {self.file_path}: {e}")
                self._data = {}

    def _save_all(self) -> bool:
        try:
            self.file_path.write_bytes(
                orjson.dumps(
                    self._data, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS
                )
            )
            return True
        except (OSError, TypeError) as e:
            self.logger.error(f"Failed to save {self.file_path}: {e}")
            return False

    def save(self, key: str, data: Dict[str, Any]) -> bool:
        self._data[key] = data
        return self._save_all()

    def load(self, key: str) -> Optional[Dict[str, Any]]:
        return self._data.get(key)

    def delete(self, key: str) -> bool:
        if key in self._data:
            del self._data[key]
            return self._save_all()
        return False

    def exists(self, key: str) -> bool:
        return key in self._data

    def list_keys(self) -> List[str]:
        return list(self._data.keys())


def open_store(location: Union[str, Path]) -> RunStore:
    """JSON store for ``*.json`` paths, YAML directory store otherwise."""
    location = Path(location)
    if location.suffix == ".json":
        return JSONRunStore(location)
    return YAMLRunStore(location)
