"""Run parameters: defaults, YAML parameter files and overrides"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from memory_vqa.backend_class import DecodingParams
from memory_vqa.dataset import DEFAULT_LAYOUTS, DatasetLayout
from memory_vqa.dataset_types import DatasetId, Split
from memory_vqa.errors import ConfigError
from memory_vqa.labels import DEFAULT_QUESTION_PATTERNS

ENV_PREFIX = "MEMORY_VQA_"


@dataclass(frozen=True)
class InferenceConfig:
    """Everything one dataset's inference run needs"""

    dataset_id: DatasetId
    k: int
    m: int
    dm_params: DecodingParams
    im_params: DecodingParams
    answer_params: DecodingParams
    use_dm: bool = True
    use_im: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Encapsulate the run parameters"""

    k: int = 2
    m: dict = field(default_factory=lambda: {"endovis18": 3, "endovis17": 3, "cholec80": 1})
    n_min: int = 500
    dm_max_new_tokens: dict = field(
        default_factory=lambda: {"endovis18": 12, "endovis17": 12, "cholec80": 16}
    )
    im_max_new_tokens: int = 160
    im_beam_width: int = 3
    answer_max_new_tokens: int = 16
    backend_url: str = ""
    backend_model: str = "default"
    max_attempts: int = 3
    backoff_seconds: float = 1.0
    backoff_max_seconds: float = 30.0
    timeout_seconds: float = 60.0
    parallelism: int = 1
    seed: int = 0
    failure_threshold: float = 0.05
    use_dm: bool = True
    use_im: bool = True
    question_patterns: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_QUESTION_PATTERNS))
    datasets: dict = field(default_factory=dict)
    metadata: dict | None = field(default=None, compare=False)  # optional metadata

    def __post_init__(self):
        checks = [
            (self.k >= 1, f"k must be >= 1, got {self.k}"),
            (self.n_min >= 1, f"n_min must be >= 1, got {self.n_min}"),
            (all(v >= 0 for v in self.m.values()), f"m must be >= 0, got {self.m}"),
            (all(v >= 1 for v in self.dm_max_new_tokens.values()), "dm_max_new_tokens must be >= 1"),
            (self.im_max_new_tokens >= 1, "im_max_new_tokens must be >= 1"),
            (self.im_beam_width >= 1, "im_beam_width must be >= 1"),
            (self.answer_max_new_tokens >= 1, "answer_max_new_tokens must be >= 1"),
            (self.max_attempts >= 1, "max_attempts must be >= 1"),
            (self.parallelism >= 1, f"parallelism must be >= 1, got {self.parallelism}"),
            (0.0 <= self.failure_threshold <= 1.0, "failure_threshold must be in [0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        """Load RunConfig with metadata from a YAML parameter file.

        Every entry is a mapping with `value` plus optional `units` and
        `description`; missing entries keep their defaults.

        Args:
            path (str | Path): path to YAML file

        Raises:
            ConfigError: unknown parameter or invalid value

        Returns:
            RunConfig: RunConfig
        """
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}

        known = {f.name for f in fields(cls)} - {"metadata"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown parameters in {path}: {sorted(unknown)}")

        values = {key: entry["value"] for key, entry in data.items()}
        meta = {
            k: {kk: vv for kk, vv in v.items() if kk != "value"}
            for k, v in data.items()
        }
        return cls(**values, metadata=meta)

    def with_env(self, environ: dict | None = None) -> "RunConfig":
        """Apply MEMORY_VQA_<PARAMETER> environment overrides (YAML-parsed)"""
        environ = os.environ if environ is None else environ
        overrides = {}
        for f in fields(self):
            key = ENV_PREFIX + f.name.upper()
            if f.name != "metadata" and key in environ:
                overrides[f.name] = yaml.safe_load(environ[key])
        return self.with_overrides(**overrides)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with the given non-None values replaced"""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self

    def m_for(self, dataset_id: DatasetId) -> int:
        """Indirect memory entries M of a dataset"""
        return int(self.m[dataset_id.tag])

    def inference_config(self, dataset_id: DatasetId, m: int | None = None) -> InferenceConfig:
        """Inference settings for one dataset

        Args:
            dataset_id (DatasetId): dataset
            m (int | None, optional): override of M for every dataset

        Returns:
            InferenceConfig: inference settings
        """
        return InferenceConfig(
            dataset_id=dataset_id,
            k=self.k,
            m=self.m_for(dataset_id) if m is None else m,
            dm_params=DecodingParams.greedy(int(self.dm_max_new_tokens[dataset_id.tag])),
            im_params=DecodingParams.beam(self.im_max_new_tokens, self.im_beam_width),
            answer_params=DecodingParams.greedy(self.answer_max_new_tokens),
            use_dm=self.use_dm,
            use_im=self.use_im,
        )

    def dataset_root(self, dataset_id: DatasetId) -> str | None:
        """Configured root directory of a dataset"""
        return self.datasets.get(dataset_id.tag, {}).get("root")

    def dataset_layout(self, dataset_id: DatasetId) -> DatasetLayout:
        """Configured file layout of a dataset, defaulting to its published one"""
        layout = self.datasets.get(dataset_id.tag, {}).get("layout")
        return DatasetLayout.from_dict(layout) if layout else DEFAULT_LAYOUTS[dataset_id]

    def split_videos(self, dataset_id: DatasetId, split: Split) -> list[str] | None:
        """Videos forming a split, None when not configured"""
        videos = self.datasets.get(dataset_id.tag, {}).get("splits", {}).get(split.tag)
        return [str(v) for v in videos] if videos else None

    def to_yaml(self, path: str | Path) -> None:
        """Write the effective configuration in parameter-file form"""
        meta = self.metadata or {}
        data = {}
        for f in fields(self):
            if f.name == "metadata":
                continue
            data[f.name] = {"value": copy.deepcopy(getattr(self, f.name)), **meta.get(f.name, {})}
        with open(path, "w") as out:
            yaml.safe_dump(data, out, sort_keys=False)

    def describe(self):
        """Print a summary table of parameters with metadata."""
        meta = self.metadata or {}
        print(f"{'Parameter':<24} {'Value':<28} {'Units':<10} {'Description'}")
        print("-" * 90)
        for f in fields(self):
            if f.name in ("metadata", "question_patterns", "datasets"):
                continue
            value = getattr(self, f.name)
            units = meta.get(f.name, {}).get("units", "")
            desc = meta.get(f.name, {}).get("description", "")
            print(f"{f.name:<24} {str(value):<28} {units:<10} {desc}")
