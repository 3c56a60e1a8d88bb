"""Exception hierarchy for memory_vqa"""

from __future__ import annotations


class MemoryVQAError(Exception):
    """Base class for every error raised by memory_vqa."""


class ConfigError(MemoryVQAError):
    """Invalid run configuration or a backend rejecting the request (HTTP 4xx)."""


class FileLayoutError(MemoryVQAError):
    """Dataset root is missing files the adapter expects."""


class RecordError(MemoryVQAError):
    """An annotation record could not be parsed.

    Args:
        message (str): what went wrong
        path (str | None, optional): file the record came from. Defaults to None.
        line (int | None, optional): 1-based line number. Defaults to None.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class LabelError(RecordError):
    """A gold answer is outside the dataset's label vocabulary."""


class AnnotationError(MemoryVQAError):
    """Memory annotation is impossible for the given inputs."""


class FitError(MemoryVQAError):
    """TF-IDF model cannot be fitted."""


class RenderError(MemoryVQAError):
    """A prompt template is missing a required field."""


class RetryableError(MemoryVQAError):
    """Transient backend failure (transport error, timeout, 5xx, 429)."""


class RunError(MemoryVQAError):
    """A run cannot continue: retries exhausted or failure ratio exceeded."""


class MockMissError(MemoryVQAError):
    """The scripted backend has no entry for the requested frame or question."""


class EvalError(MemoryVQAError):
    """Metrics cannot be computed (e.g. no predictions)."""


class ExportError(MemoryVQAError):
    """Training records cannot be exported.

    Args:
        message (str): what went wrong
        offenders (list[str] | None, optional): sample keys lacking annotation
    """

    def __init__(self, message: str, offenders: list[str] | None = None):
        self.offenders = list(offenders or [])
        if self.offenders:
            message = f"{message}: {', '.join(self.offenders)}"
        super().__init__(message)
