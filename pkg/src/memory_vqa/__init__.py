"""Library init"""
from .dataset_types import DatasetId, QuestionType, Split
from .dataset import Sample, SampleSet, load_dataset, compute_stats
from .labels import LabelVocab, normalize_answer, classify_question
from .memory import HintSet, DirectMemory, IndirectMemoryEntry
from .annotation import (
    build_frequency_table,
    annotate_direct_memory,
    annotate_indirect_memory,
    apply_annotation_exclusions,
)
from .retrieval import fit_tfidf, cosine, select_indirect_memory
from .prompting import PromptTask, render_prompt, parse_hint_list, parse_indirect_memory
from .backend_class import DecodingParams, ModelBackend
from .http_backend import HttpBackend
from .scripted_backend import MockScript, ScriptedBackend, ChaosBackend, mock_from_annotations
from .vqa_params import RunConfig, InferenceConfig
from .pipeline import Prediction, infer_sample, run_split
from .metrics import evaluate, classify_errors
from .exporter import TrainingRecord, export_training_records, validate_records
