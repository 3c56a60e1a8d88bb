"""Hint sets and memory entries shared by annotation, prompting and inference"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, unique

from memory_vqa.labels import normalize_text

NULL_HINT = "NULL"
HINT_SEPARATOR = ", "


@unique
class ParseFlag(Enum):
    """How a hint list was obtained"""

    OK = "ok"
    NULL = "null"  # explicit [NULL] sentinel
    LENIENT = "lenient"  # no brackets, whole line taken as one hint
    MALFORMED = "malformed"


@dataclass(frozen=True)
class HintSet:
    """Ordered, duplicate-free candidate answers for one question"""

    hints: tuple[str, ...] = ()
    k: int | None = None
    flag: ParseFlag = ParseFlag.OK

    def __post_init__(self):
        if len(set(self.hints)) != len(self.hints):
            raise ValueError(f"Duplicate hints in {self.hints}")
        if self.k is not None and len(self.hints) > self.k:
            raise ValueError(f"{len(self.hints)} hints exceed K={self.k}")

    @classmethod
    def null(cls) -> "HintSet":
        """The [NULL] sentinel used for excluded binary questions"""
        return cls(hints=(), flag=ParseFlag.NULL)

    @property
    def is_null(self) -> bool:
        """True for the [NULL] sentinel"""
        return self.flag is ParseFlag.NULL

    @property
    def is_flagged(self) -> bool:
        """True when parsing had to fall back or failed"""
        return self.flag in (ParseFlag.LENIENT, ParseFlag.MALFORMED)

    def __len__(self) -> int:
        return len(self.hints)

    def __iter__(self):
        return iter(self.hints)

    def contains(self, text: str) -> bool:
        """Membership after answer normalization"""
        wanted = normalize_text(text)
        return any(normalize_text(h) == wanted for h in self.hints)

    def serialize(self) -> str:
        """"[h1, h2]", or "[NULL]" for the sentinel"""
        if self.is_null:
            return f"[{NULL_HINT}]"
        return "[" + HINT_SEPARATOR.join(self.hints) + "]"


@dataclass(frozen=True)
class MemoryEntry:
    """A question with its hints, serialized as "Question [Hints]" """

    question: str
    hints: HintSet

    def serialize(self) -> str:
        """"<question> [h1, h2]" """
        return f"{self.question} {self.hints.serialize()}"


class DirectMemory(MemoryEntry):
    """The query question with hints for its own answer"""


class IndirectMemoryEntry(MemoryEntry):
    """Another question about the same image with its hints"""

    def to_dict(self) -> dict:
        """Annotation-file form {"q": ..., "hints": [...]}"""
        return {"q": self.question, "hints": list(self.hints.hints)}

    @classmethod
    def from_dict(cls, data: dict) -> "IndirectMemoryEntry":
        """Inverse of to_dict"""
        return cls(question=data["q"], hints=HintSet(tuple(data["hints"])))


def serialize_entries(entries: list[MemoryEntry]) -> str:
    """One "Question [Hints]" line per entry, newline-separated"""
    return "\n".join(entry.serialize() for entry in entries)
