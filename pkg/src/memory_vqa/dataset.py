"""Sample schema, dataset ingestion and corpus statistics"""

from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence

from memory_vqa.dataset_types import DatasetId, FrameKey, Split
from memory_vqa.errors import FileLayoutError, LabelError, RecordError
from memory_vqa.labels import LabelVocab, normalize_answer, normalize_text

if TYPE_CHECKING:
    from memory_vqa.annotation import IndirectMemoryStore

logger = logging.getLogger(__name__)

JSONL_FIELDS = ("dataset", "split", "video", "frame", "image", "question", "answer")


@dataclass(frozen=True)
class Sample:
    """One question-answer pair about one surgical frame"""

    dataset_id: DatasetId
    video_id: str
    frame_id: str
    image_path: str
    question: str
    answer: str

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("Sample question is empty")
        if not self.answer.strip():
            raise ValueError("Sample answer is empty")

    @property
    def frame_key(self) -> FrameKey:
        """(video_id, frame_id)"""
        return (self.video_id, self.frame_id)

    @property
    def key(self) -> tuple[str, str, str, str]:
        """Identity of the sample within a split"""
        return (self.dataset_id.value, self.video_id, self.frame_id, self.question)

    def to_record(self, split: Split) -> dict[str, str]:
        """Normalized JSONL record"""
        return {
            "dataset": self.dataset_id.value,
            "split": split.value,
            "video": self.video_id,
            "frame": self.frame_id,
            "image": self.image_path,
            "question": self.question,
            "answer": self.answer,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Sample":
        """Build a Sample from a normalized JSONL record

        Args:
            record (dict): record with the JSONL_FIELDS keys

        Raises:
            KeyError: a field is missing
            ValueError: a field is invalid

        Returns:
            Sample: sample
        """
        return cls(
            dataset_id=DatasetId.from_tag(record["dataset"]),
            video_id=str(record["video"]),
            frame_id=str(record["frame"]),
            image_path=str(record["image"]),
            question=str(record["question"]),
            answer=str(record["answer"]),
        )


@dataclass
class SampleSet:
    """Ordered samples of one split, indexed by frame"""

    split: Split
    samples: list[Sample] = field(default_factory=list)
    frame_index: dict[FrameKey, list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.frame_index = {}
        seen = set()
        for i, sample in enumerate(self.samples):
            if sample.key in seen:
                raise RecordError(f"Duplicate sample {sample.key} in {self.split.value} split")
            seen.add(sample.key)
            self.frame_index.setdefault(sample.frame_key, []).append(i)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    @property
    def frames(self) -> list[FrameKey]:
        """Frame keys in first-appearance order"""
        return list(self.frame_index)

    def frame_samples(self, frame: FrameKey) -> list[Sample]:
        """Samples of one frame, in ingestion order"""
        return [self.samples[i] for i in self.frame_index.get(frame, [])]

    def concat(self, other: "SampleSet") -> "SampleSet":
        """Concatenate two disjoint sets of the same split

        Raises:
            ValueError: splits differ
        """
        if other.split is not self.split:
            raise ValueError("Cannot concatenate sample sets of different splits")
        return SampleSet(split=self.split, samples=self.samples + other.samples)


@dataclass(frozen=True)
class DatasetLayout:
    """Where an adapter finds a dataset's files

    layout "native": pipe-delimited QA text files, one per frame, found by
    `video_glob` (relative to root) then `qa_glob` (relative to each video dir).
    layout "jsonl": normalized JSONL file `jsonl_name` under root.
    """

    layout: str = "native"
    video_glob: str = "seq_*"
    qa_glob: str = "vqa/Classification/*_QA.txt"
    frame_suffix: str = "_QA"
    image_template: str = "{video}/left_frames/{frame}.png"
    delimiter: str = "|"
    jsonl_name: str = "{split}.jsonl"

    @classmethod
    def from_dict(cls, data: dict | None) -> "DatasetLayout":
        """Layout from a config mapping; unknown keys are rejected"""
        return cls(**(data or {}))


DEFAULT_LAYOUTS = {
    DatasetId.ENDOVIS18: DatasetLayout(),
    DatasetId.ENDOVIS17: DatasetLayout(qa_glob="vqla/label/*.txt", frame_suffix=""),
    DatasetId.CHOLEC80: DatasetLayout(
        video_glob="Classification/*",
        qa_glob="*_QA.txt",
        image_template="frames/{video}/{frame}.png",
    ),
}


def _natural_key(text: str) -> list:
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", text)]


def _validated(sample: Sample, vocab: LabelVocab, path: str, line: int) -> Sample:
    if normalize_answer(sample.answer, vocab) is None:
        raise LabelError(
            f"Answer {sample.answer!r} is not a {vocab.dataset_id.value} label", path, line
        )
    return sample


def _load_native(
    root: Path,
    dataset_id: DatasetId,
    split: Split,
    layout: DatasetLayout,
    videos: Sequence[str] | None,
    vocab: LabelVocab,
) -> list[Sample]:
    found = {p.name: p for p in root.glob(layout.video_glob) if p.is_dir()}
    if not found:
        raise FileLayoutError(f"No video directories match {layout.video_glob!r} under {root}")
    if videos:
        missing = [v for v in videos if v not in found]
        if missing:
            raise FileLayoutError(f"Videos {missing} of the {split.value} split are missing under {root}")
        video_ids = list(videos)
    else:
        logger.warning(
            "No %s video list configured for %s; using all %d videos",
            split.value,
            dataset_id.value,
            len(found),
        )
        video_ids = sorted(found, key=_natural_key)

    samples = []
    for video_id in video_ids:
        qa_files = sorted(found[video_id].glob(layout.qa_glob), key=lambda p: _natural_key(p.name))
        for qa_file in qa_files:
            frame_id = qa_file.stem
            if layout.frame_suffix and frame_id.endswith(layout.frame_suffix):
                frame_id = frame_id[: -len(layout.frame_suffix)]
            image = layout.image_template.format(video=video_id, frame=frame_id)
            text = qa_file.read_text(encoding="utf-8")
            for lineno, line in enumerate(text.splitlines(), start=1):
                if not line.strip():
                    continue
                parts = line.split(layout.delimiter)
                # EndoVis-17-VQLA lines carry bounding boxes after the answer
                if len(parts) < 2 or not parts[0].strip() or not parts[1].strip():
                    raise RecordError(f"Expected 'question{layout.delimiter}answer', got {line!r}", str(qa_file), lineno)
                sample = Sample(
                    dataset_id=dataset_id,
                    video_id=video_id,
                    frame_id=frame_id,
                    image_path=image,
                    question=parts[0].strip(),
                    answer=parts[1].strip(),
                )
                samples.append(_validated(sample, vocab, str(qa_file), lineno))
    return samples


def read_jsonl(path: str | Path, vocab: LabelVocab | None = None) -> list[tuple[Split, Sample]]:
    """Read a normalized JSONL file

    Args:
        path (str | Path): JSONL file
        vocab (LabelVocab | None, optional): validate answers against it

    Raises:
        RecordError: unparseable line
        LabelError: answer outside the vocabulary

    Returns:
        list[tuple[Split, Sample]]: (split, sample) per line
    """
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                split = Split.from_tag(record["split"])
                sample = Sample.from_record(record)
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
                raise RecordError(f"Bad record: {err}", str(path), lineno) from err
            if vocab is not None:
                _validated(sample, vocab, str(path), lineno)
            out.append((split, sample))
    return out


def write_jsonl(sample_set: SampleSet, path: str | Path) -> None:
    """Write a SampleSet in the normalized JSONL schema (UTF-8, LF endings)

    Args:
        sample_set (SampleSet): samples
        path (str | Path): output file
    """
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sample in sample_set:
            f.write(json.dumps(sample.to_record(sample_set.split), ensure_ascii=False))
            f.write("\n")


def load_dataset(
    root: str | Path,
    dataset_id: DatasetId | str,
    split: Split | str,
    layout: DatasetLayout | None = None,
    videos: Sequence[str] | None = None,
) -> SampleSet:
    """Ingest one split of a surgical VQA corpus

    Args:
        root (str | Path): dataset root directory
        dataset_id (DatasetId | str): dataset
        split (Split | str): split to load
        layout (DatasetLayout | None, optional): file layout. Defaults to the
            dataset's published layout.
        videos (Sequence[str] | None, optional): videos forming the split
            (native layout). Defaults to every video found.

    Raises:
        FileLayoutError: root or annotation files missing
        RecordError: unparseable record
        LabelError: answer outside the label vocabulary

    Returns:
        SampleSet: samples in deterministic order
    """
    root = Path(root)
    dataset_id = DatasetId.from_tag(dataset_id)
    split = Split.from_tag(split)
    layout = layout or DEFAULT_LAYOUTS[dataset_id]
    vocab = LabelVocab.for_dataset(dataset_id)
    if not root.is_dir():
        raise FileLayoutError(f"Dataset root {root} does not exist")

    if layout.layout == "jsonl":
        path = root / layout.jsonl_name.format(split=split.tag, dataset=dataset_id.tag)
        if not path.is_file():
            raise FileLayoutError(f"Missing annotation file {path}")
        samples = [
            s
            for rec_split, s in read_jsonl(path, vocab)
            if rec_split is split and s.dataset_id is dataset_id
        ]
    elif layout.layout == "native":
        samples = _load_native(root, dataset_id, split, layout, videos, vocab)
    else:
        raise FileLayoutError(f"Unknown layout {layout.layout!r}")

    if not samples:
        raise FileLayoutError(f"No {dataset_id.value} {split.value} QA records under {root}")
    sample_set = SampleSet(split=split, samples=samples)
    logger.info(
        "Loaded %d %s %s samples over %d frames",
        len(sample_set),
        dataset_id.value,
        split.value,
        len(sample_set.frame_index),
    )
    return sample_set


@dataclass(frozen=True)
class DatasetStats:
    """Corpus statistics of one split"""

    n_videos: int
    n_frames: int
    n_qa: int
    n_labels: int
    qa_per_frame: float
    answers_per_question: float
    mem_per_frame: float | None = None

    def to_dict(self) -> dict:
        """Plain dict for JSON output"""
        return {
            "n_videos": self.n_videos,
            "n_frames": self.n_frames,
            "n_qa": self.n_qa,
            "n_labels": self.n_labels,
            "qa_per_frame": self.qa_per_frame,
            "mem_per_frame": self.mem_per_frame,
            "answers_per_question": self.answers_per_question,
        }

    def describe(self) -> None:
        """Print the statistics table"""
        print(f"{'Statistic':<24} {'Value':<12}")
        print("-" * 36)
        labels = {
            "n_videos": "#Video",
            "n_frames": "#Frame",
            "n_qa": "#QA",
            "qa_per_frame": "#QA/F",
            "mem_per_frame": "#M/F",
            "answers_per_question": "#A/Q",
            "n_labels": "#Label",
        }
        for key, name in labels.items():
            value = getattr(self, key)
            if value is None:
                text = "n/a"
            elif isinstance(value, float):
                text = f"{value:.1f}"
            else:
                text = f"{value:,}"
            print(f"{name:<24} {text:<12}")


def compute_stats(sample_set: SampleSet, store: "IndirectMemoryStore | None" = None) -> DatasetStats:
    """Table-2 style statistics of a split

    Args:
        sample_set (SampleSet): samples (may be empty)
        store (IndirectMemoryStore | None, optional): annotated indirect memory;
            without it mem_per_frame is reported as None

    Returns:
        DatasetStats: statistics
    """
    n_qa = len(sample_set)
    n_frames = len(sample_set.frame_index)
    videos = {(s.dataset_id, s.video_id) for s in sample_set}
    answers_by_question: dict[str, set[str]] = defaultdict(set)
    labels = set()
    for sample in sample_set:
        answer = normalize_text(sample.answer)
        answers_by_question[" ".join(sample.question.split())].add(answer)
        labels.add(answer)

    n_questions = len(answers_by_question)
    mem_per_frame = None
    if store is not None:
        n_entries = sum(len(store.entries(frame)) for frame in sample_set.frame_index)
        mem_per_frame = n_entries / n_frames if n_frames else 0.0

    return DatasetStats(
        n_videos=len(videos),
        n_frames=n_frames,
        n_qa=n_qa,
        n_labels=len(labels),
        qa_per_frame=n_qa / n_frames if n_frames else 0.0,
        answers_per_question=(
            sum(len(a) for a in answers_by_question.values()) / n_questions if n_questions else 0.0
        ),
        mem_per_frame=mem_per_frame,
    )

