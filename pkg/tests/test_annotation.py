"""Tests for hint annotation, exclusions and the memory annotation files"""

from collections import Counter

import numpy as np
import pytest

from memory_vqa.annotation import (
    AnswerFrequencyTable,
    DirectMemoryAnnotations,
    IndirectMemoryStore,
    annotate_direct_memory,
    annotate_indirect_memory,
    annotate_split_direct_memory,
    apply_annotation_exclusions,
    build_frequency_table,
)
from memory_vqa.dataset import Sample, SampleSet
from memory_vqa.dataset_types import DatasetId, Split
from memory_vqa.errors import AnnotationError, RecordError
from memory_vqa.testing import case_a_samples

Q = "What is the state of bipolar_forceps?"


def _table(**counts):
    return AnswerFrequencyTable(counts={Q: Counter(counts)})


@pytest.mark.parametrize(
    "counts, gold, k, expected",
    [
        ({"Idle": 10, "Grasping": 3}, "Tissue Manipulation", 2, ("Idle", "Tissue Manipulation")),
        ({"x": 5}, "x", 2, ("x",)),
        ({"x": 5, "y": 3, "z": 1}, "x", 2, ("x", "y")),
        ({"Idle": 5, "Cutting": 3, "Suction": 1}, "Suction", 2, ("Idle", "Suction")),
        ({"Idle": 5, "Cutting": 3, "Suction": 1}, "Suction", 3, ("Idle", "Cutting", "Suction")),
        ({"Idle": 5, "Cutting": 3, "Suction": 1}, "Idle", 3, ("Idle", "Cutting", "Suction")),
        ({"Idle": 5, "Cutting": 3, "Suction": 1}, "Idle", 1, ("Idle",)),
        ({"Idle": 5, "Cutting": 3, "Suction": 1}, "Cutting", 1, ("Cutting",)),
    ],
)
def test_direct_memory_examples(counts, gold, k, expected):
    hints = annotate_direct_memory(Q, gold, _table(**counts), k)
    assert hints.hints == expected


def test_ties_break_lexicographically():
    table = _table(Cutting=4, Clipping=4, Idle=4)
    assert table.ranked_answers(Q) == ["Clipping", "Cutting", "Idle"]
    assert annotate_direct_memory(Q, "Idle", table, 2).hints == ("Clipping", "Idle")


def test_gold_matches_after_normalization():
    table = _table(Tissue_Manipulation=9, Idle=2)
    hints = annotate_direct_memory(Q, "tissue manipulation", table, 2)
    assert hints.hints == ("Tissue_Manipulation", "Idle")


def test_direct_memory_errors():
    with pytest.raises(AnnotationError):
        annotate_direct_memory(Q, "Idle", _table(Idle=1), 0)
    with pytest.raises(AnnotationError):
        annotate_direct_memory("Unseen question?", None, _table(Idle=1), 2)


def test_unlabeled_question_takes_top_k():
    hints = annotate_direct_memory(Q, None, _table(a=3, b=2, c=1), 2)
    assert hints.hints == ("a", "b")


@pytest.mark.parametrize("k", [1, 2, 3])
def test_direct_memory_matches_frequency_oracle(k):
    rng = np.random.default_rng(k)
    pool = [f"answer_{i}" for i in range(8)]
    for _ in range(1000):
        n_distinct = int(rng.integers(1, len(pool) + 1))
        chosen = rng.choice(len(pool), size=n_distinct, replace=False)
        counts = {pool[i]: int(rng.integers(1, 6)) for i in chosen}
        gold = pool[int(rng.integers(len(pool)))]

        hints = annotate_direct_memory(Q, gold, _table(**counts), k)

        others = sorted((a for a in counts if a != gold), key=lambda a: (-counts[a], a))
        expected = set(others[: k - 1]) | {gold}
        assert set(hints.hints) == expected
        assert len(hints) == min(k, len(set(counts) | {gold}))
        assert gold in hints.hints


def test_frequency_table_counts_normalized_questions():
    samples = [
        Sample(DatasetId.ENDOVIS18, "seq_1", "frame000", "a.png", Q, "Idle"),
        Sample(DatasetId.ENDOVIS18, "seq_1", "frame001", "b.png", "  What is the  state of bipolar_forceps? ", "Idle"),
        Sample(DatasetId.ENDOVIS18, "seq_1", "frame002", "c.png", Q, "Cutting"),
    ]
    table = build_frequency_table(SampleSet(split=Split.TRAIN, samples=samples))

    assert len(table) == 1
    assert table.question_frequency(Q) == 3
    assert table.answers(Q) == {"Idle": 2, "Cutting": 1}
    assert table.answers_per_question == 2.0


def test_exclusions(cholec_corpus, endovis_corpus):
    cholec = cholec_corpus.sample_set(Split.TRAIN)
    cholec_table = build_frequency_table(cholec)
    exclusions = apply_annotation_exclusions(cholec, DatasetId.CHOLEC80, cholec_table)

    binary = [s for s in cholec if s.question.startswith("Is ")]
    assert binary
    assert all(s.key in exclusions.dm_excluded for s in binary)
    assert len(exclusions.dm_samples(cholec)) == len(cholec) - len(binary)

    endovis = endovis_corpus.sample_set(Split.TRAIN)
    endovis_table = build_frequency_table(endovis)
    exclusions = apply_annotation_exclusions(endovis, DatasetId.ENDOVIS18, endovis_table)

    # the organ question only ever has one answer
    organ = [s for s in endovis if s.question == "What organ is being operated?"]
    assert organ
    assert not exclusions.dm_excluded
    assert {s.key for s in organ} <= exclusions.mvqa_excluded
    assert all(s.question != "What organ is being operated?" for s in exclusions.mvqa_samples(endovis))


def _frame_with_frequencies():
    questions = {
        "What is the state of bipolar_forceps?": 800,
        "Where is bipolar_forceps located?": 600,
        "What is the state of prograsp_forceps?": 100,
    }
    table = AnswerFrequencyTable(
        counts={q: Counter({"Idle": n // 2, "Cutting": n - n // 2}) for q, n in questions.items()}
    )
    samples = [
        Sample(DatasetId.ENDOVIS18, "seq_1", "frame000", "a.png", q, "Idle")
        for q in reversed(list(questions))
    ]
    return SampleSet(split=Split.TRAIN, samples=samples), table


def test_indirect_memory_filters_and_orders_by_frequency():
    train, table = _frame_with_frequencies()

    store = annotate_indirect_memory(train, table, n_min=500, k=2)

    entries = store.entries(("seq_1", "frame000"))
    assert [e.question for e in entries] == [
        "What is the state of bipolar_forceps?",
        "Where is bipolar_forceps located?",
    ]
    assert all(e.hints.contains("Idle") for e in entries)


def test_frame_below_threshold_has_empty_memory():
    train, table = _frame_with_frequencies()

    store = annotate_indirect_memory(train, table, n_min=1000, k=2)

    assert ("seq_1", "frame000") in store
    assert store.entries(("seq_1", "frame000")) == []
    assert store.n_entries == 0


def test_indirect_memory_rejects_zero_threshold():
    train, table = _frame_with_frequencies()
    with pytest.raises(AnnotationError):
        annotate_indirect_memory(train, table, n_min=0, k=2)


def test_binary_questions_keep_gold_in_indirect_memory(cholec_oracle):
    for frame in cholec_oracle.test.frames:
        for entry in cholec_oracle.test_store.entries(frame):
            if entry.question.startswith("Is "):
                assert len(entry.hints) == 1
                assert entry.hints.hints[0] in ("yes", "no")

    binary_keys = [k for k in cholec_oracle.test_dm.hints if k[3].startswith("Is ")]
    assert binary_keys
    assert all(cholec_oracle.test_dm.hints[k].is_null for k in binary_keys)


def test_case_a_memory_excludes_nothing_and_keeps_gold():
    case_a = case_a_samples(Split.TRAIN)
    table = build_frequency_table(case_a)

    store = annotate_indirect_memory(case_a, table, n_min=1, k=2)

    entries = store.entries(("seq_1", "frame080"))
    assert len(entries) == len(case_a)
    for sample, entry in zip(sorted(case_a, key=lambda s: s.question), entries):
        assert entry.question == sample.question
        assert entry.hints.hints == (sample.answer,)


def test_store_file_round_trip(tmp_path, endovis_oracle):
    path = tmp_path / "memory.jsonl"
    endovis_oracle.test_store.write(path)

    loaded = IndirectMemoryStore.read(path)

    assert list(loaded.frames) == list(endovis_oracle.test_store.frames)
    for frame in loaded.frames:
        assert [e.serialize() for e in loaded.entries(frame)] == [
            e.serialize() for e in endovis_oracle.test_store.entries(frame)
        ]


def test_store_read_reports_bad_line(tmp_path):
    path = tmp_path / "memory.jsonl"
    path.write_text('{"frame": "seq_1/frame000", "im": []}\nnot json\n', encoding="utf-8")
    with pytest.raises(RecordError, match=":2"):
        IndirectMemoryStore.read(path)


def test_direct_memory_file_round_trip_keeps_null(tmp_path, cholec_oracle):
    path = tmp_path / "dm.jsonl"
    cholec_oracle.test_dm.write(path)

    loaded = DirectMemoryAnnotations.read(path)

    assert loaded.answers == cholec_oracle.test_dm.answers
    for key, hints in cholec_oracle.test_dm.hints.items():
        assert loaded.hints[key].serialize() == hints.serialize()
        assert loaded.hints[key].is_null == hints.is_null


def test_split_direct_memory_contains_gold(endovis_oracle):
    dm = annotate_split_direct_memory(endovis_oracle.test, endovis_oracle.table, k=3)
    for sample in endovis_oracle.test:
        hints = dm.hints[sample.key]
        assert hints.contains(sample.answer)
        assert len(hints) <= 3
