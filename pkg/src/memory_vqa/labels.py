"""Label vocabularies, answer normalization and question typing"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from memory_vqa.dataset_types import DatasetId, QuestionType

ENDOVIS_LABELS = (
    "kidney",
    "Idle",
    "Grasping",
    "Retraction",
    "Tissue_Manipulation",
    "Tool_Manipulation",
    "Cutting",
    "Cauterization",
    "Suction",
    "Looping",
    "Suturing",
    "Clipping",
    "Staple",
    "Ultrasound_Sensing",
    "left-top",
    "right-top",
    "left-bottom",
    "right-bottom",
)

CHOLEC80_LABELS = (
    "no",
    "yes",
    "0",
    "1",
    "2",
    "3",
    "calot triangle dissection",
    "gallbladder dissection",
    "clipping cutting",
    "gallbladder retraction",
    "cleaning coagulation",
    "gallbladder packaging",
    "preparation",
)

# prefix patterns, tried in order; first match wins
DEFAULT_QUESTION_PATTERNS: dict[str, dict[str, list[str]]] = {
    "endovis": {
        "Location": [r"^where is\b"],
        "Action": [r"^what is the state\b"],
    },
    "cholec80": {
        "Count": [r"^how many\b"],
        "Action": [r"^what is the phase\b"],
        "Binary": [r"^(is|are|was|were|does|do|did|has|have|can)\b"],
    },
}


def normalize_text(text: str) -> str:
    """Canonical comparison form of a label or answer: trimmed, casefolded,
    underscores read as spaces, internal whitespace collapsed.

    Args:
        text (str): raw text

    Returns:
        str: normalized text
    """
    return " ".join(text.replace("_", " ").casefold().split())


@dataclass(frozen=True)
class LabelVocab:
    """Ordered canonical labels of one dataset"""

    dataset_id: DatasetId
    labels: tuple[str, ...]
    _lookup: dict[str, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lookup: dict[str, str] = {}
        for label in self.labels:
            key = normalize_text(label)
            if key in lookup:
                raise ValueError(
                    f"Labels {lookup[key]!r} and {label!r} collide after normalization"
                )
            lookup[key] = label
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def for_dataset(cls, dataset_id: DatasetId) -> "LabelVocab":
        """Vocabulary of a dataset; EndoVis-17 and EndoVis-18 share one

        Args:
            dataset_id (DatasetId): dataset

        Returns:
            LabelVocab: label vocabulary
        """
        labels = ENDOVIS_LABELS if dataset_id.is_endovis else CHOLEC80_LABELS
        return cls(dataset_id=dataset_id, labels=labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, text: object) -> bool:
        return isinstance(text, str) and normalize_text(text) in self._lookup

    def lookup(self, text: str) -> str | None:
        """Canonical label for a text, or None when it is not in the vocabulary"""
        return self._lookup.get(normalize_text(text))


def normalize_answer(text: str, vocab: LabelVocab) -> str | None:
    """Map a free-text answer onto the vocabulary. Exact match after
    normalization only; None means Unmatched.

    Args:
        text (str): answer text
        vocab (LabelVocab): label vocabulary

    Returns:
        str | None: canonical label, or None when unmatched
    """
    if not text or not text.strip():
        return None
    return vocab.lookup(text)


class QuestionClassifier:
    """Rule-based question typing on question prefixes"""

    def __init__(self, patterns: Mapping[str, Mapping[str, Sequence[str]]] | None = None):
        """Compile the prefix patterns

        Args:
            patterns (Mapping, optional): family ("endovis" | "cholec80") ->
                question type name -> regex list. Defaults to
                DEFAULT_QUESTION_PATTERNS.
        """
        patterns = patterns or DEFAULT_QUESTION_PATTERNS
        self._rules: dict[str, list[tuple[re.Pattern, QuestionType]]] = {}
        for family, by_type in patterns.items():
            rules = []
            for type_name, regexes in by_type.items():
                q_type = QuestionType(type_name)
                for regex in regexes:
                    rules.append((re.compile(regex, re.IGNORECASE), q_type))
            self._rules[family] = rules

    @staticmethod
    def family(dataset_id: DatasetId) -> str:
        """Pattern family of a dataset"""
        return "endovis" if dataset_id.is_endovis else "cholec80"

    def classify(self, question: str, dataset_id: DatasetId) -> QuestionType:
        """Type of a question, UNKNOWN when no rule matches"""
        text = " ".join(question.split())
        for regex, q_type in self._rules.get(self.family(dataset_id), []):
            if regex.search(text):
                return q_type
        return QuestionType.UNKNOWN


_DEFAULT_CLASSIFIER = QuestionClassifier()


def classify_question(
    question: str,
    dataset_id: DatasetId,
    classifier: QuestionClassifier | None = None,
) -> QuestionType:
    """Classify a question into its dataset's question types

    Args:
        question (str): question text
        dataset_id (DatasetId): dataset the question belongs to
        classifier (QuestionClassifier | None, optional): custom patterns.
            Defaults to the built-in prefix rules.

    Returns:
        QuestionType: question type (UNKNOWN when no pattern matches)
    """
    return (classifier or _DEFAULT_CLASSIFIER).classify(question, dataset_id)


def is_binary_question(question: str, dataset_id: DatasetId) -> bool:
    """Cholec80 yes/no questions, which get no direct-memory hints"""
    return (
        dataset_id is DatasetId.CHOLEC80
        and classify_question(question, dataset_id) is QuestionType.BINARY
    )
