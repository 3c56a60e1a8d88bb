"""Deterministic scripted backends for oracle and robustness runs"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from memory_vqa.annotation import DirectMemoryAnnotations, IndirectMemoryStore
from memory_vqa.backend_class import BackendRequest, BackendResponse, ModelBackend
from memory_vqa.dataset_types import FrameKey, frame_key_str
from memory_vqa.errors import MockMissError, RetryableError
from memory_vqa.memory import serialize_entries
from memory_vqa.prompting import PromptTask


def question_key(frame: FrameKey, question: str) -> str:
    """Script key of a question about a frame: "video/frame::question" """
    return f"{frame_key_str(frame)}::{question}"


@dataclass
class MockScript:
    """Canned completions: direct memory and answers per question, indirect
    memory per frame"""

    dm: dict[str, str] = field(default_factory=dict)
    im: dict[str, str] = field(default_factory=dict)
    answers: dict[str, str] = field(default_factory=dict)

    def lookup(self, request: BackendRequest) -> str:
        """Scripted text for a request

        Raises:
            MockMissError: nothing scripted for the request's frame or question
        """
        if request.frame is None:
            raise MockMissError(f"Request {request.request_id} names no frame")
        if request.task is PromptTask.INDIRECT_MEMORY:
            table, key = self.im, frame_key_str(request.frame)
        else:
            table = self.dm if request.task is PromptTask.DIRECT_MEMORY else self.answers
            key = question_key(request.frame, request.question or "")
        if key not in table:
            raise MockMissError(f"No scripted {request.task.value} completion for {key!r}")
        return table[key]

    def to_json(self, path: str | Path) -> None:
        """Write the script as JSON"""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump({"dm": self.dm, "im": self.im, "answers": self.answers}, f, indent=1, ensure_ascii=False)
            f.write("\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "MockScript":
        """Read a script written by to_json"""
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(dm=dict(data.get("dm", {})), im=dict(data.get("im", {})), answers=dict(data.get("answers", {})))


class ScriptedBackend(ModelBackend):
    """Replays a MockScript; identical request sequences give identical responses"""

    backend_id = "scripted"

    def __init__(self, script: MockScript, latency_ms: float = 0.0, **retry_kwargs) -> None:
        """Load the script

        Args:
            script (MockScript): canned completions
            latency_ms (float, optional): simulated latency per request, slept
                and reported as the response latency. Defaults to 0.
            **retry_kwargs: retry policy passed to ModelBackend
        """
        super().__init__(**retry_kwargs)
        self.script = script
        self.latency_ms = float(latency_ms)
        self._lock = threading.Lock()
        self.calls: dict[PromptTask, int] = {task: 0 for task in PromptTask}

    def _respond(self, request: BackendRequest, attempt: int) -> str:
        with self._lock:
            self.calls[request.task] += 1
            return self.script.lookup(request)

    def _send(self, request: BackendRequest, attempt: int) -> BackendResponse:
        text = self._respond(request, attempt)
        if self.latency_ms > 0:
            time.sleep(self.latency_ms / 1000.0)
        return BackendResponse(
            text=text,
            latency_ms=self.latency_ms,
            backend_id=self.backend_id,
            raw={"request_id": request.request_id, "attempt": attempt},
        )


def mock_from_annotations(
    store: IndirectMemoryStore,
    dm_annotations: DirectMemoryAnnotations,
    latency_ms: float = 0.0,
    **retry_kwargs,
) -> ScriptedBackend:
    """Oracle backend: direct memory prompts get the annotated hints, indirect
    memory prompts the annotated entries of the frame, answer prompts the gold.

    Args:
        store (IndirectMemoryStore): annotated indirect memory of the frames
        dm_annotations (DirectMemoryAnnotations): annotated hints and gold
        latency_ms (float, optional): simulated latency. Defaults to 0.
        **retry_kwargs: retry policy passed to ModelBackend

    Returns:
        ScriptedBackend: oracle backend
    """
    return ScriptedBackend(oracle_script(store, dm_annotations), latency_ms=latency_ms, **retry_kwargs)


def oracle_script(store: IndirectMemoryStore, dm_annotations: DirectMemoryAnnotations) -> MockScript:
    """MockScript replaying annotations"""
    script = MockScript()
    for frame in store.frames:
        script.im[frame_key_str(frame)] = serialize_entries(store.entries(frame))
    for key, hints in dm_annotations.hints.items():
        _, video, frame, question = key
        q_key = question_key((video, frame), question)
        script.dm[q_key] = hints.serialize()
        script.answers[q_key] = dm_annotations.answers[key]
    return script


def _unit_hash(*parts: object) -> float:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class ChaosBackend(ScriptedBackend):
    """ScriptedBackend injecting malformed memory lines and transport faults.

    Faults and corruptions are drawn from a hash of (seed, request id, attempt
    or line), so runs are reproducible regardless of thread scheduling.
    """

    backend_id = "chaos"

    def __init__(
        self,
        script: MockScript,
        malformed_rate: float = 0.05,
        fault_rate: float = 0.02,
        seed: int = 0,
        **kwargs,
    ) -> None:
        """Configure fault injection

        Args:
            script (MockScript): canned completions
            malformed_rate (float, optional): share of memory lines corrupted
            fault_rate (float, optional): share of attempts failing in transport
            seed (int, optional): injection seed
            **kwargs: passed to ScriptedBackend
        """
        super().__init__(script, **kwargs)
        self.malformed_rate = malformed_rate
        self.fault_rate = fault_rate
        self.seed = seed
        self.faults = 0
        self.corrupted_lines = 0

    def _respond(self, request: BackendRequest, attempt: int) -> str:
        if _unit_hash(self.seed, "fault", request.request_id, attempt) < self.fault_rate:
            with self._lock:
                self.faults += 1
            raise RetryableError(f"injected transport fault on {request.request_id}")
        text = super()._respond(request, attempt)
        if request.task not in (PromptTask.DIRECT_MEMORY, PromptTask.INDIRECT_MEMORY):
            return text
        lines = text.split("\n")
        for i, line in enumerate(lines):
            if line and _unit_hash(self.seed, "malformed", request.request_id, i) < self.malformed_rate:
                # brackets and question mark gone: fails both memory grammars
                lines[i] = line.replace("[", "").replace("]", "").replace("?", "")
                with self._lock:
                    self.corrupted_lines += 1
        return "\n".join(lines)
