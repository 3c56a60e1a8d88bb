"""Dataset, split and question type enumerations"""

from __future__ import annotations

from enum import Enum, unique

# (video_id, frame_id)
FrameKey = tuple[str, str]


def _squash(tag: str) -> str:
    return "".join(ch for ch in tag.casefold() if ch.isalnum())


@unique
class DatasetId(Enum):
    """Enumeration of the supported surgical VQA corpora."""

    ENDOVIS18 = "EndoVis18"
    ENDOVIS17 = "EndoVis17"
    CHOLEC80 = "Cholec80"

    @property
    def tag(self) -> str:
        """Lower-case tag used in config files and on the command line"""
        return self.value.lower()

    @property
    def is_endovis(self) -> bool:
        """EndoVis-17 and EndoVis-18 share labels and question templates"""
        return self in (DatasetId.ENDOVIS18, DatasetId.ENDOVIS17)

    @classmethod
    def from_tag(cls, tag: str | "DatasetId") -> "DatasetId":
        """Look up a dataset from a loose tag ("endovis18", "EndoVis-18", ...)

        Args:
            tag (str | DatasetId): dataset tag

        Raises:
            ValueError: unknown dataset

        Returns:
            DatasetId: dataset
        """
        if isinstance(tag, DatasetId):
            return tag
        wanted = _squash(tag)
        for member in cls:
            if _squash(member.value) == wanted:
                return member
        raise ValueError(f"Unknown dataset {tag!r}")


@unique
class Split(Enum):
    """Enumeration of dataset splits."""

    TRAIN = "Train"
    TEST = "Test"

    @property
    def tag(self) -> str:
        """Lower-case tag"""
        return self.value.lower()

    @classmethod
    def from_tag(cls, tag: str | "Split") -> "Split":
        """Look up a split from a case-insensitive tag

        Args:
            tag (str | Split): split tag

        Raises:
            ValueError: unknown split

        Returns:
            Split: split
        """
        if isinstance(tag, Split):
            return tag
        for member in cls:
            if member.value.casefold() == tag.strip().casefold():
                return member
        raise ValueError(f"Unknown split {tag!r}")


@unique
class QuestionType(Enum):
    """Enumeration of question types reported in per-type metrics.

    Cholec80 phase questions ("What is the phase of image?") are reported as
    ACTION, matching the corpus' Binary/Count/Action typing.
    """

    ACTION = "Action"
    LOCATION = "Location"
    BINARY = "Binary"
    COUNT = "Count"
    UNKNOWN = "Unknown"


def frame_key_str(key: FrameKey) -> str:
    """Render a frame key as "video/frame" """
    return f"{key[0]}/{key[1]}"


def parse_frame_key(text: str) -> FrameKey:
    """Parse "video/frame" back into a frame key

    Args:
        text (str): frame key string

    Raises:
        ValueError: no separator present

    Returns:
        FrameKey: (video_id, frame_id)
    """
    video, sep, frame = text.rpartition("/")
    if not sep:
        raise ValueError(f"Frame key {text!r} is not of the form video/frame")
    return video, frame
