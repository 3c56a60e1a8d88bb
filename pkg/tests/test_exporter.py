"""Tests for training record export and validation"""

from collections import Counter

import numpy as np
import pytest

from memory_vqa.annotation import (
    IndirectMemoryStore,
    annotate_indirect_memory,
    annotate_split_direct_memory,
    apply_annotation_exclusions,
    build_frequency_table,
)
from memory_vqa.dataset_types import DatasetId, Split
from memory_vqa.errors import ExportError, RecordError
from memory_vqa.exporter import (
    RecordTask,
    TrainingRecord,
    export_training_records,
    read_records,
    validate_records,
    write_records,
)
from memory_vqa.memory import HintSet, IndirectMemoryEntry
from memory_vqa.prompting import PromptTask, render_prompt, render_target
from memory_vqa.retrieval import same_question
from memory_vqa.testing import SyntheticSurgicalVQA


def _inputs(corpus, k=2, n_min=2):
    train = corpus.sample_set(Split.TRAIN)
    table = build_frequency_table(train)
    store = annotate_indirect_memory(train, table, n_min, k)
    dm = annotate_split_direct_memory(train, table, k)
    return train, table, store, dm


def test_endovis_export_is_valid(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)

    records = export_training_records(train, table, store, dm, m=3, seed=0)
    report = validate_records(records, m=3)

    assert report.ok, report.violations
    exclusions = apply_annotation_exclusions(train, DatasetId.ENDOVIS18, table)
    expected_mvqa = sum(
        exclusions.mvqa_eligible(s)
        and any(not same_question(e.question, s.question) for e in store.entries(s.frame_key))
        for s in train
    )
    assert report.counts == Counter(
        {"IM": len(train.frames), "DM": len(train), "MVQA": expected_mvqa}
    )
    assert expected_mvqa > 0
    assert all(1 <= size <= 3 for size in report.memory_sizes)


def test_frame_without_memory_gets_an_empty_im_record(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)
    first = train.frames[0]
    store = IndirectMemoryStore(frames={**store.frames, first: []})

    records = export_training_records(train, table, store, dm, m=3, seed=0)

    assert records[0].task is RecordTask.IM
    assert records[0].target == render_target("")
    first_images = {s.image_path for s in train.frame_samples(first)}
    assert not [r for r in records if r.task is RecordTask.MVQA and r.image in first_images]
    assert validate_records(records, m=3).ok


def test_records_follow_frame_order(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)
    records = export_training_records(train, table, store, dm, m=3, seed=0)

    first_frame = train.frame_samples(train.frames[0])
    assert records[0].task is RecordTask.IM
    assert records[1].task is RecordTask.DM
    assert records[0].image == first_frame[0].image_path
    im_images = [r.image for r in records if r.task is RecordTask.IM]
    assert im_images == [train.frame_samples(f)[0].image_path for f in train.frames]


def test_export_is_deterministic(tmp_path, endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)

    write_records(export_training_records(train, table, store, dm, m=3, seed=4), tmp_path / "a.jsonl")
    write_records(export_training_records(train, table, store, dm, m=3, seed=4), tmp_path / "b.jsonl")
    write_records(export_training_records(train, table, store, dm, m=3, seed=5), tmp_path / "c.jsonl")

    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_cholec80_binary_questions_get_no_direct_memory_records(cholec_corpus):
    train, table, store, dm = _inputs(cholec_corpus)

    records = export_training_records(train, table, store, dm, m=1, seed=0)

    dm_records = [r for r in records if r.task is RecordTask.DM]
    assert all("Is " not in r.prompt for r in dm_records)
    n_binary = sum(s.question.startswith("Is ") for s in train)
    assert len(dm_records) == len(train) - n_binary
    assert validate_records(records, m=1).ok


def test_memory_sizes_follow_the_seeded_draws():
    # 3 tools per frame and N=1: every frame keeps 7 entries, so the memory
    # size of each record is exactly its draw
    corpus = SyntheticSurgicalVQA(
        DatasetId.ENDOVIS18, n_videos=30, frames_per_video=56, tools_per_frame=3, n_train_videos=30, seed=2
    )
    train, table, store, dm = _inputs(corpus, n_min=1)

    records = export_training_records(train, table, store, dm, m=3, seed=0)
    report = validate_records(records, m=3)

    assert report.ok
    n_mvqa = report.counts["MVQA"]
    assert n_mvqa >= 10000
    rng = np.random.default_rng(0)
    assert report.memory_sizes == [int(rng.integers(1, 4)) for _ in range(n_mvqa)]
    shares = np.bincount(report.memory_sizes, minlength=4)[1:] / n_mvqa
    np.testing.assert_allclose(shares, [1 / 3] * 3, atol=0.02)


def test_prompts_match_inference_prompts(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)
    records = export_training_records(train, table, store, dm, m=3, seed=0)

    sample = train[0]
    assert records[0].prompt == render_prompt(PromptTask.INDIRECT_MEMORY).rendered_text
    assert records[1].prompt == render_prompt(PromptTask.DIRECT_MEMORY, question=sample.question).rendered_text


def test_corrupted_hint_list_is_reported_at_its_index(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)
    records = export_training_records(train, table, store, dm, m=3, seed=0)

    index = next(i for i, r in enumerate(records) if r.task is RecordTask.DM)
    broken = records[index]
    records[index] = TrainingRecord(broken.task, broken.image, broken.prompt, broken.target.lstrip("["))

    report = validate_records(records, m=3)

    assert len(report.violations) == 1
    assert report.violations[0][0] == index
    assert report.violations[0][1].startswith("DM:")


def _mvqa_record(memory, hints, gold="Idle", question="What is the state of bipolar_forceps?"):
    prompt = render_prompt(PromptTask.MEMORY_VQA, question=question, memory=memory, hints=hints)
    return TrainingRecord(RecordTask.MVQA, "seq_1/left_fr/frame000.png", prompt.rendered_text, render_target(gold))


def test_memory_vqa_record_checks():
    other = IndirectMemoryEntry("Where is bipolar_forceps located?", HintSet(("left-top",)))
    itself = IndirectMemoryEntry("What is the state of bipolar_forceps?", HintSet(("Idle",)))
    records = [
        _mvqa_record([other], HintSet(("Idle", "Cutting"))),
        _mvqa_record([], HintSet(("Idle", "Cutting"))),
        _mvqa_record([other], HintSet(("Suction", "Cutting"))),
        _mvqa_record([other, itself], HintSet(("Idle",))),
        _mvqa_record([other], HintSet.null(), gold="yes", question="Is grasper used in preparation?"),
        _mvqa_record([other, other, other, other], HintSet(("Idle",))),
    ]

    report = validate_records(records, m=3)

    by_index = {}
    for i, message in report.violations:
        by_index.setdefault(i, []).append(message)
    assert sorted(by_index) == [1, 2, 3, 5]
    assert "0 memory entries" in by_index[1][0]
    assert "missing from hints" in by_index[2][0]
    assert "question itself" in by_index[3][0]
    assert "4 memory entries" in by_index[5][0]


def test_target_needs_turn_end():
    record = TrainingRecord(RecordTask.DM, "img.png", render_prompt(PromptTask.DIRECT_MEMORY, question="Q?").rendered_text, "[a]")
    report = validate_records([record], m=3)
    assert report.violations == [(0, "DM: target lacks the end-of-turn marker")]


def test_missing_annotations_name_the_offenders(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)
    frame = train.frames[1]
    partial = IndirectMemoryStore({f: e for f, e in store.frames.items() if f != frame})
    del dm.hints[train[0].key]

    with pytest.raises(ExportError) as err:
        export_training_records(train, table, partial, dm, m=3, seed=0)

    assert f"{frame[0]}/{frame[1]}" in err.value.offenders
    assert any(train[0].question in o for o in err.value.offenders)


def test_export_needs_positive_m(endovis_corpus):
    train, table, store, dm = _inputs(endovis_corpus)
    with pytest.raises(ExportError):
        export_training_records(train, table, store, dm, m=0, seed=0)


def test_record_file_round_trip(tmp_path, cholec_corpus):
    train, table, store, dm = _inputs(cholec_corpus)
    records = export_training_records(train, table, store, dm, m=1, seed=0)
    path = tmp_path / "records.jsonl"

    assert write_records(records, path) == len(records)
    assert read_records(path) == records


def test_bad_record_line(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text('{"task": "XX", "image": "", "prompt": "", "target": ""}\n', encoding="utf-8")
    with pytest.raises(RecordError):
        read_records(path)
