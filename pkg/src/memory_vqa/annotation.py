"""Ground-truth direct and indirect memory built from training answers"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from memory_vqa.dataset import Sample, SampleSet
from memory_vqa.dataset_types import DatasetId, FrameKey, frame_key_str, parse_frame_key
from memory_vqa.errors import AnnotationError, RecordError
from memory_vqa.labels import is_binary_question, normalize_text
from memory_vqa.memory import HintSet, IndirectMemoryEntry

logger = logging.getLogger(__name__)

# (dataset, video, frame, question)
SampleKey = tuple[str, str, str, str]


def normalize_question(question: str) -> str:
    """Frequency-table key: trimmed, whitespace collapsed, case preserved"""
    return " ".join(question.split())


@dataclass
class AnswerFrequencyTable:
    """Per-question answer counts over the training split"""

    counts: dict[str, Counter] = field(default_factory=dict)

    def __contains__(self, question: str) -> bool:
        return normalize_question(question) in self.counts

    def __len__(self) -> int:
        return len(self.counts)

    def answers(self, question: str) -> dict[str, int]:
        """Answer -> count for a question (empty when unseen)"""
        return dict(self.counts.get(normalize_question(question), {}))

    def question_frequency(self, question: str) -> int:
        """Number of training samples asking this question"""
        return sum(self.counts.get(normalize_question(question), Counter()).values())

    def ranked_answers(self, question: str) -> list[str]:
        """Answers by frequency, descending; ties broken lexicographically"""
        counts = self.counts.get(normalize_question(question), Counter())
        return [a for a, _ in sorted(counts.items(), key=lambda item: (-item[1], item[0]))]

    def n_answers(self, question: str) -> int:
        """Distinct answers observed for a question"""
        return len(self.counts.get(normalize_question(question), ()))

    @property
    def answers_per_question(self) -> float:
        """Mean number of distinct answers per question"""
        if not self.counts:
            return 0.0
        return sum(len(c) for c in self.counts.values()) / len(self.counts)


def build_frequency_table(train: SampleSet) -> AnswerFrequencyTable:
    """Count answers per normalized question text

    Args:
        train (SampleSet): training split

    Returns:
        AnswerFrequencyTable: per-question answer counts
    """
    table = AnswerFrequencyTable()
    for sample in train:
        table.counts.setdefault(normalize_question(sample.question), Counter())[
            sample.answer
        ] += 1
    return table


def annotate_direct_memory(
    question: str,
    gold_answer: str | None,
    table: AnswerFrequencyTable,
    k: int,
) -> HintSet:
    """Hints for a question: the K-1 most frequent training answers plus gold.

    When gold is already among them, the next most frequent distinct answer
    fills the slot so the set keeps min(K, #candidates) hints.

    Args:
        question (str): question text
        gold_answer (str | None): gold answer (None for unlabeled questions)
        table (AnswerFrequencyTable): training answer counts
        k (int): hint set size

    Raises:
        AnnotationError: K < 1, or question unseen and no gold given

    Returns:
        HintSet: annotated hints
    """
    if k < 1:
        raise AnnotationError(f"K must be >= 1, got {k}")
    ranked = table.ranked_answers(question)
    if not ranked and not gold_answer:
        raise AnnotationError(f"No training answers and no gold for {question!r}")
    if not gold_answer:
        return HintSet(tuple(ranked[:k]), k=k)

    head = ranked[: k - 1]
    if normalize_text(gold_answer) in {normalize_text(h) for h in head}:
        hints = ranked[:k]
    else:
        hints = head + [gold_answer]
    return HintSet(tuple(hints), k=k)


@dataclass(frozen=True)
class AnnotationExclusions:
    """Samples left out of hint annotation or memory-augmented training"""

    dm_excluded: frozenset[SampleKey]
    mvqa_excluded: frozenset[SampleKey]

    def dm_eligible(self, sample: Sample) -> bool:
        """Sample gets annotated direct memory"""
        return sample.key not in self.dm_excluded

    def mvqa_eligible(self, sample: Sample) -> bool:
        """Sample may become a memory-augmented VQA training record"""
        return sample.key not in self.mvqa_excluded

    def dm_samples(self, samples: Iterable[Sample]) -> list[Sample]:
        """Filtered view: samples receiving hint annotation"""
        return [s for s in samples if self.dm_eligible(s)]

    def mvqa_samples(self, samples: Iterable[Sample]) -> list[Sample]:
        """Filtered view: samples usable for memory-augmented VQA records"""
        return [s for s in samples if self.mvqa_eligible(s)]


def apply_annotation_exclusions(
    samples: Iterable[Sample], dataset_id: DatasetId, table: AnswerFrequencyTable
) -> AnnotationExclusions:
    """Cholec80 binary questions get no hints (rendered as [NULL]); questions
    with a single observed training answer are left out of memory-augmented
    VQA records.

    Args:
        samples (Iterable[Sample]): samples to screen
        dataset_id (DatasetId): dataset
        table (AnswerFrequencyTable): training answer counts

    Returns:
        AnnotationExclusions: excluded sample keys
    """
    dm_excluded = set()
    mvqa_excluded = set()
    for sample in samples:
        if is_binary_question(sample.question, dataset_id):
            dm_excluded.add(sample.key)
        if table.n_answers(sample.question) == 1:
            mvqa_excluded.add(sample.key)
    return AnnotationExclusions(frozenset(dm_excluded), frozenset(mvqa_excluded))


def sample_hints(
    sample: Sample, table: AnswerFrequencyTable, k: int, exclusions: AnnotationExclusions
) -> HintSet:
    """Annotated direct-memory hints of one sample ([NULL] when excluded)"""
    if not exclusions.dm_eligible(sample):
        return HintSet.null()
    return annotate_direct_memory(sample.question, sample.answer, table, k)


@dataclass
class IndirectMemoryStore:
    """Per-frame indirect memory entries"""

    frames: dict[FrameKey, list[IndirectMemoryEntry]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def __contains__(self, frame: FrameKey) -> bool:
        return frame in self.frames

    def entries(self, frame: FrameKey) -> list[IndirectMemoryEntry]:
        """Entries of a frame, empty for unknown frames"""
        return list(self.frames.get(frame, []))

    @property
    def n_entries(self) -> int:
        """Total entries over all frames"""
        return sum(len(e) for e in self.frames.values())

    def write(self, path: str | Path) -> None:
        """Write the memory annotation file: one JSON object per frame"""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for frame, entries in self.frames.items():
                record = {"frame": frame_key_str(frame), "im": [e.to_dict() for e in entries]}
                f.write(json.dumps(record, ensure_ascii=False))
                f.write("\n")

    @classmethod
    def read(cls, path: str | Path) -> "IndirectMemoryStore":
        """Read a memory annotation file

        Raises:
            RecordError: unparseable line
        """
        store = cls()
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    frame = parse_frame_key(record["frame"])
                    store.frames[frame] = [IndirectMemoryEntry.from_dict(e) for e in record["im"]]
                except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
                    raise RecordError(f"Bad memory record: {err}", str(path), lineno) from err
        return store


def annotate_indirect_memory(
    train: SampleSet,
    table: AnswerFrequencyTable,
    n_min: int,
    k: int,
    exclusions: AnnotationExclusions | None = None,
) -> IndirectMemoryStore:
    """Build per-frame indirect memory from a split's QA pairs.

    A frame keeps the QA pairs whose question occurs at least `n_min` times in
    training; answers become hints the same way as direct memory. Entries are
    ordered by question frequency (descending, ties lexicographic). Binary
    Cholec80 questions keep their gold answer as the single hint.

    Args:
        train (SampleSet): split whose frames get memory (the training split,
            or any split annotated with training statistics)
        table (AnswerFrequencyTable): training answer counts
        n_min (int): minimum question frequency N
        k (int): hints per entry
        exclusions (AnnotationExclusions | None, optional): dataset exclusions.
            Defaults to apply_annotation_exclusions over `train`.

    Raises:
        AnnotationError: N < 1

    Returns:
        IndirectMemoryStore: memory per frame (frames may have no entries)
    """
    if n_min < 1:
        raise AnnotationError(f"N must be >= 1, got {n_min}")
    store = IndirectMemoryStore()
    for frame in train.frames:
        samples = train.frame_samples(frame)
        if exclusions is None:
            frame_exclusions = apply_annotation_exclusions(samples, samples[0].dataset_id, table)
        else:
            frame_exclusions = exclusions
        kept = [s for s in samples if table.question_frequency(s.question) >= n_min]
        kept.sort(key=lambda s: (-table.question_frequency(s.question), s.question))
        entries = []
        for sample in kept:
            if frame_exclusions.dm_eligible(sample):
                hints = annotate_direct_memory(sample.question, sample.answer, table, k)
            else:
                hints = HintSet((sample.answer,), k=1)
            entries.append(IndirectMemoryEntry(question=sample.question, hints=hints))
        store.frames[frame] = entries
    logger.info(
        "Annotated %d indirect memory entries over %d frames (N=%d)",
        store.n_entries,
        len(store),
        n_min,
    )
    return store


@dataclass
class DirectMemoryAnnotations:
    """Annotated hints and gold answer per sample"""

    hints: dict[SampleKey, HintSet] = field(default_factory=dict)
    answers: dict[SampleKey, str] = field(default_factory=dict)

    def __contains__(self, key: SampleKey) -> bool:
        return key in self.hints

    def write(self, path: str | Path) -> None:
        """One JSON object per sample"""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for key, hints in self.hints.items():
                dataset, video, frame, question = key
                record = {
                    "dataset": dataset,
                    "video": video,
                    "frame": frame,
                    "question": question,
                    "answer": self.answers[key],
                    "hints": None if hints.is_null else list(hints.hints),
                }
                f.write(json.dumps(record, ensure_ascii=False))
                f.write("\n")

    @classmethod
    def read(cls, path: str | Path) -> "DirectMemoryAnnotations":
        """Inverse of write

        Raises:
            RecordError: unparseable line
        """
        out = cls()
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (rec["dataset"], rec["video"], rec["frame"], rec["question"])
                    hints = rec["hints"]
                    out.hints[key] = HintSet.null() if hints is None else HintSet(tuple(hints))
                    out.answers[key] = rec["answer"]
                except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
                    raise RecordError(f"Bad direct memory record: {err}", str(path), lineno) from err
        return out


def annotate_split_direct_memory(
    samples: SampleSet,
    table: AnswerFrequencyTable,
    k: int,
    exclusions: AnnotationExclusions | None = None,
) -> DirectMemoryAnnotations:
    """Direct memory for every sample of a split

    Args:
        samples (SampleSet): samples to annotate
        table (AnswerFrequencyTable): training answer counts
        k (int): hints per question
        exclusions (AnnotationExclusions | None, optional): dataset exclusions.
            Defaults to apply_annotation_exclusions over `samples`.

    Returns:
        DirectMemoryAnnotations: hints and gold per sample
    """
    out = DirectMemoryAnnotations()
    for sample in samples:
        if exclusions is None:
            sample_exclusions = apply_annotation_exclusions([sample], sample.dataset_id, table)
        else:
            sample_exclusions = exclusions
        out.hints[sample.key] = sample_hints(sample, table, k, sample_exclusions)
        out.answers[sample.key] = sample.answer
    return out
