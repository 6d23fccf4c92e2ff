from pathlib import Path

import numpy as np
import pytest

from conversum.cli import FIXTURE_DIR
from conversum.corpus import Dataset
from conversum.scoring import StubEncoder, StubLanguageIdentifier
from conversum.synthetic import make_documents

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def encoder():
    return StubEncoder(dim=16)


@pytest.fixture(scope="session")
def lang_id():
    return StubLanguageIdentifier()


@pytest.fixture(scope="session")
def fixture_dataset():
    return Dataset.from_dir(FIXTURE_DIR)


@pytest.fixture(scope="session")
def fifty_docs():
    return make_documents(50, seed=7, prefix="fifty")
