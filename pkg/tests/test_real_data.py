"""Corpus statistics of the published datasets; skipped unless they are mounted
under $MEMORY_VQA_DATA_ROOT"""

from pathlib import Path

import pytest

from memory_vqa.dataset import compute_stats, load_dataset
from memory_vqa.dataset_types import DatasetId, Split
from memory_vqa.vqa_params import RunConfig


@pytest.fixture
def real_config(parameter_file):
    return RunConfig.from_yaml(parameter_file)


def _load(real_data_root, config, dataset_id, split):
    root = real_data_root / Path(config.dataset_root(dataset_id)).name
    if not root.is_dir():
        pytest.skip(f"{root} not mounted")
    videos = config.split_videos(dataset_id, split)
    if videos is None and dataset_id is DatasetId.CHOLEC80:
        pytest.skip("Cholec80 split video lists are not configured")
    return load_dataset(root, dataset_id, split, layout=config.dataset_layout(dataset_id), videos=videos)


@pytest.mark.parametrize(
    "dataset_id, split, n_qa, n_labels",
    [
        (DatasetId.ENDOVIS18, Split.TRAIN, 9014, 18),
        (DatasetId.ENDOVIS18, Split.TEST, 2769, None),
        (DatasetId.ENDOVIS17, Split.TEST, 472, 12),
        (DatasetId.CHOLEC80, Split.TRAIN, 34086, 13),
        (DatasetId.CHOLEC80, Split.TEST, 9096, None),
    ],
)
def test_published_statistics(real_data_root, real_config, dataset_id, split, n_qa, n_labels):
    stats = compute_stats(_load(real_data_root, real_config, dataset_id, split))

    assert stats.n_qa == n_qa
    if n_labels is not None:
        assert stats.n_labels == n_labels


def test_endovis18_train_frames(real_data_root, real_config):
    stats = compute_stats(_load(real_data_root, real_config, DatasetId.ENDOVIS18, Split.TRAIN))
    assert stats.n_videos == 11
    assert stats.n_frames == 1560


def test_cholec80_test_frames(real_data_root, real_config):
    stats = compute_stats(_load(real_data_root, real_config, DatasetId.CHOLEC80, Split.TEST))
    assert stats.n_frames == 4548
    assert stats.qa_per_frame == 2.0
