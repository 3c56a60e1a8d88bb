"""Helper functions for testing code"""

from dataclasses import dataclass
from pathlib import Path

from memory_vqa.annotation import (
    AnswerFrequencyTable,
    DirectMemoryAnnotations,
    IndirectMemoryStore,
    annotate_indirect_memory,
    annotate_split_direct_memory,
    build_frequency_table,
)
from memory_vqa.dataset import DEFAULT_LAYOUTS, SampleSet
from memory_vqa.dataset_types import DatasetId, Split
from memory_vqa.scripted_backend import MockScript, oracle_script
from memory_vqa.testing.synthetic_surgical_vqa import SyntheticSurgicalVQA

# 1x1 PNG
PLACEHOLDER_PNG = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010806000000"
    "1f15c4890000000d49444154789c63f80f0000010100051800d84e0000000049454e44ae426082"
)

# where the native layouts keep the QA file of a frame
QA_FILE_TEMPLATES = {
    DatasetId.ENDOVIS18: "{video}/vqa/Classification/{frame}_QA.txt",
    DatasetId.ENDOVIS17: "{video}/vqla/label/{frame}.txt",
    DatasetId.CHOLEC80: "Classification/{video}/{frame}_QA.txt",
}


def write_native_dataset(root: str | Path, sample_sets: list[SampleSet]) -> Path:
    """Write sample sets to disk in their dataset's native layout

    Args:
        root (str | Path): dataset root to create
        sample_sets (list[SampleSet]): samples of one dataset, any splits

    Returns:
        Path: dataset root
    """
    root = Path(root)
    by_file: dict[Path, list[str]] = {}
    for sample_set in sample_sets:
        for sample in sample_set:
            template = QA_FILE_TEMPLATES[sample.dataset_id]
            qa_file = root / template.format(video=sample.video_id, frame=sample.frame_id)
            by_file.setdefault(qa_file, []).append(f"{sample.question}|{sample.answer}")
            image = root / sample.image_path
            if not image.exists():
                image.parent.mkdir(parents=True, exist_ok=True)
                image.write_bytes(PLACEHOLDER_PNG)
    for qa_file, lines in by_file.items():
        qa_file.parent.mkdir(parents=True, exist_ok=True)
        qa_file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


@dataclass
class OracleFixture:
    """Synthetic splits with their annotations and the replaying script"""

    train: SampleSet
    test: SampleSet
    table: AnswerFrequencyTable
    train_store: IndirectMemoryStore
    test_store: IndirectMemoryStore
    test_dm: DirectMemoryAnnotations
    script: MockScript


def build_oracle_fixture(
    corpus: SyntheticSurgicalVQA,
    k: int = 2,
    n_min: int = 2,
) -> OracleFixture:
    """Annotate a synthetic corpus with training statistics and script an
    oracle backend for its test split

    Args:
        corpus (SyntheticSurgicalVQA): synthetic corpus
        k (int, optional): hints per question. Defaults to 2.
        n_min (int, optional): minimum question frequency. Defaults to 2.

    Returns:
        OracleFixture: fixture
    """
    train = corpus.sample_set(Split.TRAIN)
    test = corpus.sample_set(Split.TEST)
    table = build_frequency_table(train)
    test_store = annotate_indirect_memory(test, table, n_min, k)
    test_dm = annotate_split_direct_memory(test, table, k)
    return OracleFixture(
        train=train,
        test=test,
        table=table,
        train_store=annotate_indirect_memory(train, table, n_min, k),
        test_store=test_store,
        test_dm=test_dm,
        script=oracle_script(test_store, test_dm),
    )


def dataset_config(corpus: SyntheticSurgicalVQA, root: str | Path) -> dict:
    """`datasets` parameter entry pointing at a written synthetic corpus"""
    layout = DEFAULT_LAYOUTS[corpus.dataset_id]
    return {
        corpus.dataset_id.tag: {
            "root": str(root),
            "layout": {
                "layout": layout.layout,
                "video_glob": layout.video_glob,
                "qa_glob": layout.qa_glob,
                "frame_suffix": layout.frame_suffix,
                "image_template": layout.image_template,
            },
            "splits": {
                Split.TRAIN.tag: corpus.videos(Split.TRAIN),
                Split.TEST.tag: corpus.videos(Split.TEST),
            },
        }
    }
