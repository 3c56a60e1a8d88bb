"""Instruction-tuning records for the three memory tasks"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, unique
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from memory_vqa.annotation import (
    AnnotationExclusions,
    AnswerFrequencyTable,
    DirectMemoryAnnotations,
    IndirectMemoryStore,
    apply_annotation_exclusions,
)
from memory_vqa.dataset import SampleSet
from memory_vqa.dataset_types import frame_key_str
from memory_vqa.errors import ExportError, RecordError
from memory_vqa.memory import ParseFlag
from memory_vqa.prompting import (
    TURN_END,
    PromptTask,
    hints_target,
    match_prompt,
    memory_target,
    parse_hint_list,
    parse_indirect_memory,
    render_prompt,
    render_target,
)
from memory_vqa.retrieval import same_question, select_indirect_memory

logger = logging.getLogger(__name__)


@unique
class RecordTask(Enum):
    """Training objective a record supervises"""

    DM = "DM"
    IM = "IM"
    MVQA = "MVQA"


@dataclass(frozen=True)
class TrainingRecord:
    """One user turn (`prompt`) with its loss-bearing assistant turn (`target`)"""

    task: RecordTask
    image: str
    prompt: str
    target: str

    def to_dict(self) -> dict:
        return {"task": self.task.value, "image": self.image, "prompt": self.prompt, "target": self.target}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingRecord":
        return cls(
            task=RecordTask(data["task"]),
            image=data["image"],
            prompt=data["prompt"],
            target=data["target"],
        )


def _missing_annotations(
    train: SampleSet,
    store: IndirectMemoryStore,
    dm_annotations: DirectMemoryAnnotations,
    exclusions: AnnotationExclusions,
) -> list[str]:
    offenders = []
    for frame in train.frames:
        if frame not in store:
            offenders.append(frame_key_str(frame))
    for sample in train:
        needs_dm = exclusions.dm_eligible(sample) or exclusions.mvqa_eligible(sample)
        if needs_dm and sample.key not in dm_annotations:
            offenders.append(f"{frame_key_str(sample.frame_key)}::{sample.question}")
    return offenders


def iter_training_records(
    train: SampleSet,
    table: AnswerFrequencyTable,
    store: IndirectMemoryStore,
    dm_annotations: DirectMemoryAnnotations,
    m: int,
    seed: int,
    exclusions: AnnotationExclusions | None = None,
) -> Iterator[TrainingRecord]:
    """Stream the training records of a split.

    Per frame: one IM record whose target is the frame's annotated memory
    (just the end-of-turn marker when the frame has no entries),
    then per sample a DM record (unless excluded) and an MVQA record (unless
    single-answer excluded, or no memory entry other than the question
    itself exists). MVQA memory holds the top c entries for the question,
    c drawn uniformly from 1..M by a numpy PCG64 generator seeded with `seed`,
    one draw per MVQA record in stream order.

    Args:
        train (SampleSet): training split
        table (AnswerFrequencyTable): training answer counts
        store (IndirectMemoryStore): annotated indirect memory
        dm_annotations (DirectMemoryAnnotations): annotated hints per sample
        m (int): largest memory size M
        seed (int): generator seed
        exclusions (AnnotationExclusions | None, optional): dataset exclusions.
            Defaults to apply_annotation_exclusions over `train`.

    Raises:
        ExportError: M < 1, or annotations missing for eligible samples

    Yields:
        TrainingRecord: records in deterministic order
    """
    if m < 1:
        raise ExportError(f"Export needs M >= 1, got {m}")
    if exclusions is None and len(train):
        exclusions = apply_annotation_exclusions(train, train[0].dataset_id, table)
    exclusions = exclusions or AnnotationExclusions(frozenset(), frozenset())
    offenders = _missing_annotations(train, store, dm_annotations, exclusions)
    if offenders:
        raise ExportError(f"{len(offenders)} eligible items lack annotation", offenders)

    rng = np.random.default_rng(seed)
    im_prompt = render_prompt(PromptTask.INDIRECT_MEMORY).rendered_text
    for frame in train.frames:
        samples = train.frame_samples(frame)
        entries = store.entries(frame)
        image = samples[0].image_path
        yield TrainingRecord(RecordTask.IM, image, im_prompt, memory_target(entries))

        for sample in samples:
            if exclusions.dm_eligible(sample):
                prompt = render_prompt(PromptTask.DIRECT_MEMORY, question=sample.question)
                yield TrainingRecord(
                    RecordTask.DM, image, prompt.rendered_text, hints_target(dm_annotations.hints[sample.key])
                )
            if not exclusions.mvqa_eligible(sample):
                continue
            if not any(not same_question(e.question, sample.question) for e in entries):
                continue
            c = int(rng.integers(1, m + 1))
            memory = select_indirect_memory(sample.question, entries, c)
            prompt = render_prompt(
                PromptTask.MEMORY_VQA,
                question=sample.question,
                memory=memory,
                hints=dm_annotations.hints[sample.key],
            )
            yield TrainingRecord(RecordTask.MVQA, image, prompt.rendered_text, render_target(sample.answer))


def export_training_records(
    train: SampleSet,
    table: AnswerFrequencyTable,
    store: IndirectMemoryStore,
    dm_annotations: DirectMemoryAnnotations,
    m: int,
    seed: int,
    exclusions: AnnotationExclusions | None = None,
) -> list[TrainingRecord]:
    """All training records of a split, see iter_training_records"""
    records = list(iter_training_records(train, table, store, dm_annotations, m, seed, exclusions))
    counts = Counter(r.task.value for r in records)
    logger.info(
        "Exported %d records (DM %d, IM %d, MVQA %d)",
        len(records),
        counts["DM"],
        counts["IM"],
        counts["MVQA"],
    )
    return records


def write_records(records: Iterable[TrainingRecord], path: str | Path) -> int:
    """Write records as JSONL with fields task, image, prompt, target

    Returns:
        int: number of records written
    """
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False))
            f.write("\n")
            n += 1
    return n


def read_records(path: str | Path) -> list[TrainingRecord]:
    """Read a record file

    Raises:
        RecordError: unparseable line
    """
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(TrainingRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
                raise RecordError(f"Bad training record: {err}", str(path), lineno) from err
    return out


@dataclass
class ValidationReport:
    """Violations found in a record stream, by record index"""

    n_records: int = 0
    counts: Counter = field(default_factory=Counter)
    memory_sizes: list[int] = field(default_factory=list)
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "counts": dict(self.counts),
            "violations": [{"index": i, "message": msg} for i, msg in self.violations],
        }


def _target_body(target: str) -> str | None:
    return target[: -len(TURN_END)] if target.endswith(TURN_END) else None


def _record_problems(record: TrainingRecord, m: int, report: ValidationReport) -> list[str]:
    body = _target_body(record.target)
    if body is None:
        return ["target lacks the end-of-turn marker"]

    if record.task is RecordTask.IM:
        problems = []
        if match_prompt(PromptTask.INDIRECT_MEMORY, record.prompt) is None:
            problems.append("prompt does not follow the indirect memory template")
        if parse_indirect_memory(body).skipped:
            problems.append("target has memory lines that do not parse")
        return problems

    if record.task is RecordTask.DM:
        problems = []
        if match_prompt(PromptTask.DIRECT_MEMORY, record.prompt) is None:
            problems.append("prompt does not follow the direct memory template")
        hints = parse_hint_list(body)
        if hints.flag not in (ParseFlag.OK, ParseFlag.NULL) or hints.serialize() != body:
            problems.append(f"target {body!r} is not a hint list")
        return problems

    fields = match_prompt(PromptTask.MEMORY_VQA, record.prompt)
    if fields is None:
        return ["prompt does not follow the memory VQA template"]
    problems = []
    memory = parse_indirect_memory(fields["memory"])
    if memory.skipped:
        problems.append("memory block has lines that do not parse")
    n_entries = len(memory.entries)
    report.memory_sizes.append(n_entries)
    if not 1 <= n_entries <= m:
        problems.append(f"{n_entries} memory entries outside [1, {m}]")
    hints = parse_hint_list(fields["hints"])
    if not hints.is_null and not hints.contains(body):
        problems.append(f"gold {body!r} missing from hints {fields['hints']}")
    if any(same_question(e.question, fields["question"]) for e in memory.entries):
        problems.append("memory contains the question itself")
    return problems


def validate_records(records: Sequence[TrainingRecord], m: int) -> ValidationReport:
    """Check records re-parse with the prompt parsers and respect the
    memory size bound and the gold-in-hints rule ([NULL] hints exempt)

    Args:
        records (Sequence[TrainingRecord]): records to check
        m (int): largest memory size M

    Returns:
        ValidationReport: violations with record indices
    """
    report = ValidationReport()
    for i, record in enumerate(records):
        report.n_records += 1
        report.counts[record.task.value] += 1
        for problem in _record_problems(record, m, report):
            report.violations.append((i, f"{record.task.value}: {problem}"))
    if report.violations:
        logger.warning("%d violations in %d records", len(report.violations), report.n_records)
    return report
