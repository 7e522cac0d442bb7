# conftest.py

"""Shared fixtures: the ground-truth corpus and models fitted on it."""

import pytest

from profile_sphere.oracle import SyntheticProcessConfig, generate_process
from profile_sphere.pipeline import PipelineManager


@pytest.fixture(scope="session")
def process_corpus():
    """Shuffled gradual-change corpus (100 x 20) and its true order."""
    return generate_process(SyntheticProcessConfig(seed=0), shuffle=True)


@pytest.fixture(scope="session")
def fitted_model(process_corpus):
    """Model fitted on the shuffled corpus, without a curve."""
    matrix, _ = process_corpus
    return PipelineManager().fit(matrix)


@pytest.fixture(scope="session")
def ordering(process_corpus, fitted_model):
    """Ordering result of the shuffled corpus; its model carries the curve."""
    matrix, _ = process_corpus
    return PipelineManager().order(fitted_model, matrix)
