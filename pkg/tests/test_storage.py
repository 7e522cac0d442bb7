# test_storage.py

"""
Unit tests for the storage handler.

This test suite covers:
- The abstract ModelStore interface
- JSONModelStore save/load, schema checks and storage info
- ArtifactWriter JSON and CSV output
- Deterministic JSON text
"""

import json

import numpy as np
import pandas as pd
import pytest

from profile_sphere.errors import ProfileSphereError
from profile_sphere.storage_handler import (
    SCHEMA_VERSION,
    ArtifactWriter,
    JSONModelStore,
    ModelStore,
    StorageError,
    dumps,
)


class TestStorageError:
    """Test the StorageError exception."""

    def test_inheritance(self):
        """Test that StorageError is a toolkit error."""
        assert issubclass(StorageError, ProfileSphereError)
        assert str(StorageError("boom")) == "boom"


class TestModelStoreAbstract:
    """Test the abstract ModelStore base class."""

    def test_is_abstract(self):
        """Test that ModelStore cannot be instantiated directly."""
        with pytest.raises(TypeError):
            ModelStore()

    def test_abstract_methods(self):
        """Test the declared interface."""
        assert ModelStore.__abstractmethods__ == {'save_model', 'load_model', 'get_storage_info'}


class TestJSONModelStore:
    """Test the model.json store."""

    def test_round_trip_is_byte_identical(self, tmp_path, ordering):
        """Test that save -> load -> save reproduces the same bytes."""
        first = tmp_path / "a" / "model.json"
        second = tmp_path / "b" / "model.json"
        JSONModelStore(str(first)).save_model(ordering.model)
        loaded = JSONModelStore(str(first)).load_model()
        JSONModelStore(str(second)).save_model(loaded)
        assert first.read_bytes() == second.read_bytes()
        assert loaded.has_curve

    def test_loaded_model_projects_identically(self, tmp_path, fitted_model):
        """Test that the reloaded embedding is exactly the stored one."""
        path = tmp_path / "model.json"
        JSONModelStore(str(path)).save_model(fitted_model)
        loaded = JSONModelStore(str(path)).load_model()
        np.testing.assert_array_equal(loaded.embedding.eigenvectors, fitted_model.embedding.eigenvectors)
        assert loaded.sphere.sphere.radius == fitted_model.sphere.sphere.radius
        assert loaded.fingerprint == fitted_model.fingerprint
        assert not loaded.has_curve

    def test_metadata_block(self, tmp_path, fitted_model):
        """Test the schema version and tool name in the document."""
        path = tmp_path / "model.json"
        JSONModelStore(str(path)).save_model(fitted_model)
        data = json.loads(path.read_text())
        assert data['metadata']['schema_version'] == SCHEMA_VERSION
        assert data['metadata']['tool'] == 'profile-sphere'
        assert data['metadata']['has_curve'] is False
        assert not (tmp_path / "model.json.tmp").exists()

    def test_missing_file(self, tmp_path):
        """Test loading a file that does not exist."""
        with pytest.raises(StorageError, match="not found"):
            JSONModelStore(str(tmp_path / "none.json")).load_model()

    def test_invalid_json(self, tmp_path):
        """Test loading a malformed file."""
        path = tmp_path / "model.json"
        path.write_text("{ invalid")
        with pytest.raises(StorageError, match="Invalid JSON"):
            JSONModelStore(str(path)).load_model()

    def test_wrong_schema_version(self, tmp_path):
        """Test that an unknown schema version is refused."""
        path = tmp_path / "model.json"
        path.write_text(json.dumps({'metadata': {'schema_version': 99}, 'model': {}}))
        with pytest.raises(StorageError, match="schema version"):
            JSONModelStore(str(path)).load_model()

    def test_not_a_model(self, tmp_path):
        """Test that a JSON document without a model is refused."""
        path = tmp_path / "model.json"
        path.write_text(json.dumps({'records': []}))
        with pytest.raises(StorageError, match="not a model file"):
            JSONModelStore(str(path)).load_model()

    def test_corrupt_model(self, tmp_path):
        """Test that a model block with missing fields is refused."""
        path = tmp_path / "model.json"
        path.write_text(json.dumps({'metadata': {'schema_version': SCHEMA_VERSION}, 'model': {'config': {}}}))
        with pytest.raises(StorageError, match="corrupt"):
            JSONModelStore(str(path)).load_model()

    def test_storage_info(self, tmp_path, fitted_model):
        """Test the reported file information."""
        path = tmp_path / "model.json"
        store = JSONModelStore(str(path))
        store.save_model(fitted_model)
        info = store.get_storage_info()
        assert info['type'] == 'JSON'
        assert info['file_size_bytes'] > 0
        assert info['metadata']['fingerprint'] == fitted_model.fingerprint

    def test_storage_info_missing_file(self, tmp_path):
        """Test storage info for a file that does not exist yet."""
        info = JSONModelStore(str(tmp_path / "none.json")).get_storage_info()
        assert info['file_size_bytes'] == 0
        assert info['metadata'] == {}

    @pytest.mark.parametrize("size, expected", [
        (512, "512.0 B"), (2048, "2.0 KB"), (3 * 1024 ** 2, "3.0 MB"), (1024 ** 4, "1.0 TB"),
    ])
    def test_format_file_size(self, size, expected):
        """Test human-readable sizes."""
        assert JSONModelStore()._format_file_size(size) == expected


class TestArtifactWriter:
    """Test artifact output."""

    def test_write_json(self, tmp_path):
        """Test that numpy values are converted and paths recorded."""
        writer = ArtifactWriter(str(tmp_path / "out"))
        path = writer.write_json('x.json', {'b': np.float64(0.5), 'a': np.arange(3)})
        assert json.loads(path.read_text()) == {'a': [0, 1, 2], 'b': 0.5}
        assert writer.written == [path]

    def test_write_frame(self, tmp_path):
        """Test CSV output with full float precision."""
        writer = ArtifactWriter(str(tmp_path))
        path = writer.write_frame('t.csv', pd.DataFrame({'meter_id': ['a'], 'v': [0.1]}))
        assert path.read_text() == "meter_id,v\na,0.10000000000000001\n"
        assert pd.read_csv(path)['v'].iloc[0] == 0.1

    def test_nan_is_refused_in_json(self, tmp_path):
        """Test that NaN cannot be written into a JSON artifact."""
        with pytest.raises(StorageError):
            ArtifactWriter(str(tmp_path)).write_json('x.json', {'v': float('nan')})


class TestDumps:
    """Test deterministic JSON text."""

    def test_sorted_and_terminated(self):
        """Test key order, indentation and the trailing newline."""
        assert dumps({'b': 1, 'a': (1, 2)}) == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'

    def test_unknown_type(self):
        """Test that unsupported objects raise TypeError."""
        with pytest.raises(TypeError):
            dumps({'x': object()})
