# storage_handler.py

"""
Persistence of fitted models and run artifacts.

Model files are versioned JSON documents written atomically. Artifacts
(CSV tables, plot data, metrics) go through ArtifactWriter, which formats
numbers deterministically so identical runs produce identical bytes.
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from profile_sphere.errors import ProfileSphereError
from profile_sphere.model import FittedModel
from profile_sphere.profiles import ProfileMatrix, write_profiles

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TOOL_NAME = 'profile-sphere'


class StorageError(ProfileSphereError):
    """Custom exception for storage-related errors."""
    pass


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(data: Any) -> str:
    """Deterministic JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default, allow_nan=False) + '\n'


def _atomic_write(path: Path, text: str) -> None:
    temp_path = path.with_name(path.name + '.tmp')
    with open(temp_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    temp_path.replace(path)


class ModelStore(ABC):
    """
    Abstract base class for model stores.

    This defines the interface that every storage backend implements.
    """

    @abstractmethod
    def save_model(self, model: FittedModel) -> None:
        """Persist a fitted model."""
        pass

    @abstractmethod
    def load_model(self) -> FittedModel:
        """Load the stored model."""
        pass

    @abstractmethod
    def get_storage_info(self) -> Dict[str, Any]:
        """Get information about the storage backend."""
        pass


class JSONModelStore(ModelStore):
    """
    model.json file store.

    The document holds a ``metadata`` block (schema version, tool, corpus
    fingerprint) and the ``model`` itself.
    """

    def __init__(self, file_path: str = "model.json"):
        """
        Initialize the JSON model store.

        Args:
            file_path: Path to the model file
        """
        self.file_path = Path(file_path)

    def save_model(self, model: FittedModel) -> None:
        """
        Write the model, replacing any previous file atomically.

        Raises:
            StorageError: If the file cannot be written
        """
        data = {
            'metadata': {
                'schema_version': SCHEMA_VERSION,
                'tool': TOOL_NAME,
                'fingerprint': model.fingerprint,
                'has_curve': model.has_curve,
            },
            'model': model.to_dict(),
        }
        try:
            self.file_path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(self.file_path, dumps(data))
        except (OSError, TypeError, ValueError) as e:
            raise StorageError(f"Failed to save model: {e}")
        logger.info("Saved model to %s", self.file_path)

    def _read(self) -> Dict[str, Any]:
        try:
            with open(self.file_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise StorageError(f"Model file not found: {self.file_path}")
        except json.JSONDecodeError as e:
            raise StorageError(f"Invalid JSON format in {self.file_path}: {e}")
        except OSError as e:
            raise StorageError(f"Failed to read {self.file_path}: {e}")
        if not isinstance(data, dict) or 'model' not in data:
            raise StorageError(f"{self.file_path} is not a model file")
        version = data.get('metadata', {}).get('schema_version')
        if version != SCHEMA_VERSION:
            raise StorageError(f"Unsupported model schema version {version!r} (expected {SCHEMA_VERSION})")
        return data

    def load_model(self) -> FittedModel:
        """
        Load and rebuild the stored model.

        Raises:
            StorageError: Missing file, bad JSON, wrong schema version or invalid content
        """
        data = self._read()
        try:
            return FittedModel.from_dict(data['model'])
        except (KeyError, TypeError, ValueError) as e:
            raise StorageError(f"Model file {self.file_path} is corrupt: {e}")

    def get_storage_info(self) -> Dict[str, Any]:
        """Get information about the JSON model file."""
        file_size = self.file_path.stat().st_size if self.file_path.exists() else 0
        try:
            metadata = self._read().get('metadata', {})
        except StorageError:
            metadata = {}
        return {
            'type': 'JSON',
            'file_path': str(self.file_path),
            'file_size_bytes': file_size,
            'file_size_human': self._format_file_size(file_size),
            'metadata': metadata,
        }

    def _format_file_size(self, size_bytes: float) -> str:
        """Format file size in human-readable format."""
        for unit in ['B', 'KB', 'MB', 'GB']:
            if size_bytes < 1024:
                return f"{size_bytes:.1f} {unit}"
            size_bytes /= 1024
        return f"{size_bytes:.1f} TB"


class ArtifactWriter:
    """Writes CSV and JSON artifacts into one output directory."""

    def __init__(self, output_dir: str = "."):
        self.output_dir = Path(output_dir)
        self.written: List[Path] = []

    def _target(self, name: str) -> Path:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"Cannot create output directory {self.output_dir}: {e}")
        return self.output_dir / name

    def write_json(self, name: str, data: Any) -> Path:
        path = self._target(name)
        try:
            _atomic_write(path, dumps(data))
        except (OSError, TypeError, ValueError) as e:
            raise StorageError(f"Failed to write {path}: {e}")
        self.written.append(path)
        logger.debug("Wrote %s", path)
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._target(name)
        try:
            frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
        except OSError as e:
            raise StorageError(f"Failed to write {path}: {e}")
        self.written.append(path)
        logger.debug("Wrote %s", path)
        return path

    def write_profiles(self, name: str, matrix: ProfileMatrix) -> Path:
        """Write profiles in the ingestion CSV layout."""
        path = self._target(name)
        try:
            write_profiles(matrix, str(path))
        except OSError as e:
            raise StorageError(f"Failed to write {path}: {e}")
        self.written.append(path)
        logger.debug("Wrote %s", path)
        return path
