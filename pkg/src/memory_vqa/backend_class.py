"""Base model backend: one image + prompt in, one text completion out."""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum, unique

from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from memory_vqa.dataset_types import FrameKey
from memory_vqa.errors import ConfigError, RetryableError, RunError
from memory_vqa.prompting import PromptTask

logger = logging.getLogger(__name__)


@unique
class DecodingStrategy(Enum):
    """Decoding strategies a backend is asked to use"""

    GREEDY = "greedy"
    BEAM = "beam"


@dataclass(frozen=True)
class DecodingParams:
    """Generation length and search strategy of one request"""

    max_new_tokens: int
    strategy: DecodingStrategy = DecodingStrategy.GREEDY
    beam_width: int = 1

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.beam_width < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.beam_width}")
        if self.strategy is DecodingStrategy.GREEDY and self.beam_width != 1:
            raise ConfigError("greedy decoding has beam width 1")

    @classmethod
    def greedy(cls, max_new_tokens: int) -> "DecodingParams":
        """Greedy decoding"""
        return cls(max_new_tokens=max_new_tokens)

    @classmethod
    def beam(cls, max_new_tokens: int, width: int) -> "DecodingParams":
        """Beam search of the given width"""
        return cls(max_new_tokens=max_new_tokens, strategy=DecodingStrategy.BEAM, beam_width=width)

    def to_dict(self) -> dict:
        """Plain dict for config echo and traces"""
        return {
            "max_new_tokens": self.max_new_tokens,
            "strategy": self.strategy.value,
            "beam_width": self.beam_width,
        }


@dataclass(frozen=True)
class BackendRequest:
    """One completion request"""

    request_id: str
    image_bytes: bytes
    media_type: str
    prompt: str
    params: DecodingParams
    task: PromptTask
    frame: FrameKey | None = None
    question: str | None = None

    def __post_init__(self):
        if not self.image_bytes:
            raise ValueError(f"Request {self.request_id} has no image")

    @property
    def prompt_hash(self) -> str:
        """sha256 of the prompt text"""
        return hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendResponse:
    """One completion; empty text is legal"""

    text: str
    latency_ms: float
    backend_id: str
    raw: dict = field(default_factory=dict)
    attempts: int = 1


class ModelBackend(ABC):
    """Abstract model service.

    Subclasses implement `_send`; `complete` adds bounded retries with
    exponential backoff around it. Safe to call from many threads.
    """

    backend_id = "backend"

    def __init__(
        self,
        max_attempts: int = 3,
        backoff_seconds: float = 1.0,
        backoff_max_seconds: float = 30.0,
    ) -> None:
        """Retry policy

        Args:
            max_attempts (int, optional): attempts per request. Defaults to 3.
            backoff_seconds (float, optional): first backoff. Defaults to 1.0.
            backoff_max_seconds (float, optional): backoff cap. Defaults to 30.0.
        """
        if max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {max_attempts}")
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self.backoff_max_seconds = backoff_max_seconds

    @abstractmethod
    def _send(self, request: BackendRequest, attempt: int) -> BackendResponse:
        """Send one attempt of a request (to be implemented by subclasses).

        Raises:
            RetryableError: transient failure, the request may be retried
            ConfigError: the backend rejected the request
        """

    def complete(self, request: BackendRequest) -> BackendResponse:
        """Send a request, retrying transient failures

        Args:
            request (BackendRequest): request

        Raises:
            RunError: retries exhausted
            ConfigError: backend rejected the request

        Returns:
            BackendResponse: completion
        """
        retrying = Retrying(
            stop=stop_after_attempt(self.max_attempts),
            wait=wait_exponential(multiplier=self.backoff_seconds, max=self.backoff_max_seconds),
            retry=retry_if_exception_type(RetryableError),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        attempts = 0
        try:
            for attempt in retrying:
                with attempt:
                    attempts = attempt.retry_state.attempt_number
                    response = self._send(request, attempts)
        except RetryableError as err:
            raise RunError(
                f"Request {request.request_id} failed after {attempts} attempts: {err}"
            ) from err
        return replace(response, attempts=attempts)

    def close(self) -> None:
        """Release resources held by the backend"""
