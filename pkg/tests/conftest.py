"""Shared fixtures"""

import os
from pathlib import Path

import pytest

from memory_vqa.dataset_types import DatasetId
from memory_vqa.testing import SyntheticSurgicalVQA, build_oracle_fixture
from memory_vqa.testing.testing_shr import PLACEHOLDER_PNG

REPO_ROOT = Path(__file__).resolve().parents[1]
GOLDEN_DIR = Path(__file__).resolve().parent / "data" / "golden"
PARAMETER_FILE = REPO_ROOT / "parameter_files" / "memory_vqa_parameters.yaml"


@pytest.fixture(scope="session")
def endovis_corpus():
    # 4 test videos x 6 frames x 5 questions = 120 test samples
    return SyntheticSurgicalVQA(
        DatasetId.ENDOVIS18, n_videos=8, frames_per_video=6, n_train_videos=4, seed=7
    )


@pytest.fixture(scope="session")
def cholec_corpus():
    return SyntheticSurgicalVQA(
        DatasetId.CHOLEC80, n_videos=6, frames_per_video=5, n_train_videos=4, seed=3
    )


@pytest.fixture(scope="session")
def endovis_oracle(endovis_corpus):
    return build_oracle_fixture(endovis_corpus, k=2, n_min=2)


@pytest.fixture(scope="session")
def cholec_oracle(cholec_corpus):
    return build_oracle_fixture(cholec_corpus, k=2, n_min=2)


@pytest.fixture
def image_loader():
    return lambda sample: PLACEHOLDER_PNG


@pytest.fixture
def real_data_root():
    root = os.environ.get("MEMORY_VQA_DATA_ROOT")
    if not root or not Path(root).is_dir():
        pytest.skip("real corpora not mounted: set MEMORY_VQA_DATA_ROOT to enable")
    return Path(root)


@pytest.fixture
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture
def parameter_file():
    return PARAMETER_FILE
