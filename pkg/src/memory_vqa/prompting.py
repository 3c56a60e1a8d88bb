"""Prompt templates for the four tasks and parsers for model output"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, unique
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from memory_vqa.dataset_types import FrameKey
from memory_vqa.errors import RenderError
from memory_vqa.memory import (
    NULL_HINT,
    HintSet,
    IndirectMemoryEntry,
    MemoryEntry,
    ParseFlag,
    serialize_entries,
)

TEMPLATE_DIR = Path(__file__).parent / "templates"
TURN_END = "<|end|>"
MEMORY_MARKER = "Memory:\n"
QUESTION_MARKER = "Question:\n"

_PLACEHOLDER = re.compile(r"\{\{ (\w+) \}\}")
_BRACKETS = re.compile(r"\[([^\[\]]*)\]")
_MEMORY_LINE = re.compile(r"^(?P<q>\S.*\?)\s*\[(?P<h>[^\[\]]*)\]\s*$")


@unique
class PromptTask(Enum):
    """The four prompt templates"""

    VANILLA_VQA = "vanilla_vqa"
    DIRECT_MEMORY = "direct_memory"
    INDIRECT_MEMORY = "indirect_memory"
    MEMORY_VQA = "memory_vqa"


@dataclass(frozen=True)
class PromptBundle:
    """A rendered user turn, ending with the assistant role marker"""

    task: PromptTask
    rendered_text: str
    image_ref: FrameKey | None = None


@lru_cache(maxsize=None)
def load_template(task: PromptTask) -> str:
    """Raw template text of a task"""
    return (TEMPLATE_DIR / f"{task.value}.txt").read_text(encoding="utf-8")


def _fill(template: str, values: dict[str, str]) -> str:
    # single pass, so field values containing "{{ x }}" stay literal
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def render_prompt(
    task: PromptTask,
    question: str | None = None,
    memory: Sequence[MemoryEntry] | None = None,
    hints: HintSet | None = None,
    image_ref: FrameKey | None = None,
) -> PromptBundle:
    """Render the user turn of a task

    Args:
        task (PromptTask): template to render
        question (str | None, optional): question (all tasks but INDIRECT_MEMORY)
        memory (Sequence[MemoryEntry] | None, optional): selected indirect
            memory (MEMORY_VQA; may be empty)
        hints (HintSet | None, optional): direct-memory hints of the question
            (MEMORY_VQA)
        image_ref (FrameKey | None, optional): frame the prompt is about

    Raises:
        RenderError: a field the task needs is missing

    Returns:
        PromptBundle: rendered prompt
    """
    values: dict[str, str] = {}
    if task is not PromptTask.INDIRECT_MEMORY:
        if question is None or not question.strip():
            raise RenderError(f"{task.value} prompt needs a question")
        values["question"] = question
    if task is PromptTask.MEMORY_VQA:
        if memory is None:
            raise RenderError("memory_vqa prompt needs a memory block (may be empty)")
        if hints is None:
            raise RenderError("memory_vqa prompt needs direct memory hints")
        values["memory"] = "".join(entry.serialize() + "\n" for entry in memory)
        values["hints"] = hints.serialize()
    return PromptBundle(task=task, rendered_text=_fill(load_template(task), values), image_ref=image_ref)


_FIELD_PATTERNS = {"hints": r"\[[^\[\]]*\]"}


@lru_cache(maxsize=None)
def _prompt_pattern(task: PromptTask) -> re.Pattern:
    template = load_template(task)
    parts, pos = [], 0
    for m in _PLACEHOLDER.finditer(template):
        parts.append(re.escape(template[pos : m.start()]))
        name = m.group(1)
        parts.append(f"(?P<{name}>{_FIELD_PATTERNS.get(name, '.*?')})")
        pos = m.end()
    parts.append(re.escape(template[pos:]))
    return re.compile("".join(parts), re.DOTALL)


def match_prompt(task: PromptTask, text: str) -> dict[str, str] | None:
    """Recover the field values of a rendered prompt

    Args:
        task (PromptTask): template the prompt should follow
        text (str): rendered prompt

    Returns:
        dict[str, str] | None: placeholder -> value, or None when the text does
        not follow the template
    """
    match = _prompt_pattern(task).fullmatch(text)
    return None if match is None else match.groupdict()


def serialize_hints(hints: HintSet) -> str:
    """"[h1, h2]" form used in prompts and targets"""
    return hints.serialize()


def serialize_entry(entry: MemoryEntry) -> str:
    """"Question [Hints]" line of a memory entry"""
    return entry.serialize()


def render_target(text: str) -> str:
    """Assistant turn for a training target"""
    return f"{text}{TURN_END}"


def hints_target(hints: HintSet) -> str:
    """Assistant turn of a direct memory record"""
    return render_target(hints.serialize())


def memory_target(entries: Sequence[MemoryEntry]) -> str:
    """Assistant turn of an indirect memory record"""
    return render_target(serialize_entries(list(entries)))


def strip_turn_end(text: str) -> str:
    """Drop end-of-turn markers a backend may echo"""
    return text.replace(TURN_END, "")


def _parse_hint_body(body: str) -> HintSet:
    body = body.strip()
    if body.casefold() == NULL_HINT.casefold():
        return HintSet.null()
    labels: list[str] = []
    for label in body.split(","):
        label = label.strip()
        if label and label not in labels:
            labels.append(label)
    return HintSet(tuple(labels))


def parse_hint_list(text: str) -> HintSet:
    """Parse "[h1, h2, ...]" out of model output.

    Surrounding text is ignored. "[NULL]" gives the null sentinel; text without
    brackets becomes one hint flagged LENIENT; blank text is flagged MALFORMED.
    Never raises.

    Args:
        text (str): model output

    Returns:
        HintSet: parsed hints with their parse flag
    """
    stripped = strip_turn_end(text or "").strip()
    if not stripped:
        return HintSet(flag=ParseFlag.MALFORMED)
    match = _BRACKETS.search(stripped)
    if match is None:
        line = next(ln.strip() for ln in stripped.splitlines() if ln.strip())
        return HintSet((line,), flag=ParseFlag.LENIENT)
    return _parse_hint_body(match.group(1))


@dataclass
class IndirectMemoryParse:
    """Parsed indirect memory and the number of lines that failed the grammar"""

    entries: list[IndirectMemoryEntry] = field(default_factory=list)
    skipped: int = 0


def parse_indirect_memory(text: str) -> IndirectMemoryParse:
    """Parse one "<question>? [<hints>]" entry per line; other non-blank lines
    are skipped and counted. Never raises.

    Args:
        text (str): model output

    Returns:
        IndirectMemoryParse: entries in output order plus skip count
    """
    out = IndirectMemoryParse()
    for line in strip_turn_end(text or "").splitlines():
        line = line.strip()
        if not line:
            continue
        match = _MEMORY_LINE.match(line)
        if match is None:
            out.skipped += 1
            continue
        out.entries.append(
            IndirectMemoryEntry(question=match.group("q").strip(), hints=_parse_hint_body(match.group("h")))
        )
    return out


def split_memory_prompt(prompt: str) -> tuple[str, str] | None:
    """Memory block and question line of a rendered memory_vqa prompt

    Returns:
        tuple[str, str] | None: (memory block, question line), or None when the
        prompt does not follow the template
    """
    start = prompt.find(MEMORY_MARKER)
    middle = prompt.rfind(QUESTION_MARKER)
    end = prompt.rfind(TURN_END)
    if start < 0 or middle < start or end < middle:
        return None
    memory = prompt[start + len(MEMORY_MARKER) : middle]
    question_line = prompt[middle + len(QUESTION_MARKER) : end]
    return memory, question_line
