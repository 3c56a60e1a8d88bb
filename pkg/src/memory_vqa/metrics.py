"""Answer normalization and classification metrics over predictions"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, f1_score, precision_score, recall_score

from memory_vqa.dataset_types import DatasetId, QuestionType
from memory_vqa.errors import EvalError
from memory_vqa.labels import (
    LabelVocab,
    QuestionClassifier,
    classify_question,
    normalize_answer,
    normalize_text,
)
from memory_vqa.pipeline import Prediction
from memory_vqa.prompting import strip_turn_end

logger = logging.getLogger(__name__)

# predicted label of answers outside the vocabulary; never a class of its own
UNMATCHED = "<unmatched>"

ERROR_CAUSE_DEFINITIONS = {
    "wrong_dm": "gold answer absent from the generated direct memory hints",
    "wrong_im": "answer copies a hint of the selected indirect memory that the direct memory lacks",
    "other": "wrong answer with neither memory cause",
}

__all__ = [
    "normalize_answer",
    "ConfusionMatrix",
    "ScoreSet",
    "MetricsReport",
    "evaluate",
    "error_cause",
    "classify_errors",
    "plot_per_type",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Gold label rows by predicted label columns; the last column counts
    answers that matched no label"""

    labels: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts[:, : len(self.labels)]))

    def to_frame(self) -> pd.DataFrame:
        """Counts as a labeled table"""
        return pd.DataFrame(
            self.counts, index=list(self.labels), columns=[*self.labels, UNMATCHED]
        )


def build_confusion_matrix(y_true: Sequence[str], y_pred: Sequence[str], labels: Sequence[str]) -> ConfusionMatrix:
    """Confusion matrix over `labels` plus the unmatched column

    Args:
        y_true (Sequence[str]): gold labels, all in `labels`
        y_pred (Sequence[str]): predicted labels or UNMATCHED
        labels (Sequence[str]): label order, covering every gold and predicted label

    Returns:
        ConfusionMatrix: counts
    """
    columns = [*labels, UNMATCHED]
    counts = confusion_matrix(y_true, y_pred, labels=columns)
    # the unmatched row is never a gold class
    return ConfusionMatrix(labels=tuple(labels), counts=counts[: len(labels), :])


@dataclass(frozen=True)
class ScoreSet:
    """Accuracy, macro recall, macro-F1 and weighted-F1 of a set of predictions"""

    n: int
    accuracy: float
    macro_recall: float
    macro_f1: float
    weighted_f1: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
        }


def _scores(y_true: list[str], y_pred: list[str], vocab_order: Sequence[str]) -> ScoreSet:
    # macro means run over classes present in gold only
    present = set(y_true)
    labels = [label for label in vocab_order if label in present]
    truth, pred = np.asarray(y_true, dtype=object), np.asarray(y_pred, dtype=object)
    return ScoreSet(
        n=len(y_true),
        accuracy=float(np.mean(truth == pred)),
        macro_recall=float(recall_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        macro_f1=float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        weighted_f1=float(f1_score(y_true, y_pred, labels=labels, average="weighted", zero_division=0)),
    )


@dataclass
class MetricsReport:
    """Metrics of one prediction set.

    "Rec." is reported as macro-averaged recall.
    """

    overall: ScoreSet
    per_type: dict[str, ScoreSet]
    per_class: list[dict]
    confusion: ConfusionMatrix
    unmatched_count: int
    n_failed: int
    error_causes: dict[str, int] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def macro_recall(self) -> float:
        return self.overall.macro_recall

    @property
    def macro_f1(self) -> float:
        return self.overall.macro_f1

    @property
    def weighted_f1(self) -> float:
        return self.overall.weighted_f1

    def to_dict(self) -> dict:
        """Machine-readable report"""
        return {
            **self.overall.to_dict(),
            "recall_averaging": "macro",
            "unmatched_count": self.unmatched_count,
            "n_failed": self.n_failed,
            "per_type": {name: scores.to_dict() for name, scores in self.per_type.items()},
            "per_class": self.per_class,
            "error_causes": dict(self.error_causes),
            "error_cause_definitions": dict(ERROR_CAUSE_DEFINITIONS),
            "confusion": {
                "labels": list(self.confusion.labels),
                "columns": [*self.confusion.labels, UNMATCHED],
                "counts": self.confusion.counts.tolist(),
            },
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
            f.write("\n")

    def per_type_frame(self) -> pd.DataFrame:
        """One row per question type plus "All" """
        rows = {"All": self.overall.to_dict(), **{k: v.to_dict() for k, v in self.per_type.items()}}
        frame = pd.DataFrame.from_dict(rows, orient="index")
        frame.index.name = "question_type"
        return frame

    def per_class_frame(self) -> pd.DataFrame:
        """Per-class precision, recall, F1 and support"""
        return pd.DataFrame(self.per_class).set_index("label")

    def describe(self) -> None:
        """Print the metrics tables"""
        table = self.per_type_frame().rename(
            columns={"accuracy": "Acc.", "macro_recall": "Rec.", "macro_f1": "mF1", "weighted_f1": "wF1"}
        )
        print(table.to_string(float_format=lambda v: f"{100 * v:.1f}"))
        print(f"\nunmatched answers: {self.unmatched_count}   failed samples: {self.n_failed}")
        if self.error_causes:
            print("\nerror causes:")
            for cause, count in self.error_causes.items():
                print(f"  {cause:<10} {count:>6}  {ERROR_CAUSE_DEFINITIONS[cause]}")


def _predicted_label(prediction: Prediction, vocab: LabelVocab) -> str:
    label = normalize_answer(strip_turn_end(prediction.answer_text), vocab)
    return UNMATCHED if label is None else label


def evaluate(
    predictions: Sequence[Prediction],
    vocab: LabelVocab | None = None,
    classifier: QuestionClassifier | None = None,
) -> MetricsReport:
    """Score predictions against their gold answers.

    Answers are mapped onto the label vocabulary by exact match after
    normalization; unmatched answers are wrong and count as a miss of the
    gold class without adding a false positive to any class.

    Args:
        predictions (Sequence[Prediction]): predictions of one dataset
        vocab (LabelVocab | None, optional): label vocabulary. Defaults to the
            vocabulary of the first prediction's dataset.
        classifier (QuestionClassifier | None, optional): question typing rules

    Raises:
        EvalError: no predictions, or a gold answer outside the vocabulary

    Returns:
        MetricsReport: metrics report
    """
    if not predictions:
        raise EvalError("No predictions to evaluate")
    dataset_id = DatasetId.from_tag(predictions[0].dataset)
    vocab = vocab or LabelVocab.for_dataset(dataset_id)

    y_true, y_pred, types = [], [], []
    for prediction in predictions:
        gold = vocab.lookup(prediction.gold)
        if gold is None:
            raise EvalError(f"Gold answer {prediction.gold!r} of sample {prediction.index} is not a label")
        y_true.append(gold)
        y_pred.append(_predicted_label(prediction, vocab))
        types.append(classify_question(prediction.question, prediction.dataset_id, classifier))

    per_type = {}
    for q_type in QuestionType:
        idx = [i for i, t in enumerate(types) if t is q_type]
        if idx:
            per_type[q_type.value] = _scores(
                [y_true[i] for i in idx], [y_pred[i] for i in idx], vocab.labels
            )

    present = set(y_true)
    labels = [label for label in vocab.labels if label in present]
    precision = precision_score(y_true, y_pred, labels=labels, average=None, zero_division=0)
    recall = recall_score(y_true, y_pred, labels=labels, average=None, zero_division=0)
    f1 = f1_score(y_true, y_pred, labels=labels, average=None, zero_division=0)
    support = Counter(y_true)
    per_class = [
        {
            "label": label,
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": support[label],
        }
        for i, label in enumerate(labels)
    ]

    report = MetricsReport(
        overall=_scores(y_true, y_pred, vocab.labels),
        per_type=per_type,
        per_class=per_class,
        confusion=build_confusion_matrix(y_true, y_pred, vocab.labels),
        unmatched_count=sum(p == UNMATCHED for p in y_pred),
        n_failed=sum(p.failed for p in predictions),
        error_causes=classify_errors(predictions, vocab),
    )
    logger.info(
        "Evaluated %d predictions: accuracy %.4f, macro-F1 %.4f",
        len(predictions),
        report.accuracy,
        report.macro_f1,
    )
    return report


def error_cause(prediction: Prediction, vocab: LabelVocab) -> str | None:
    """Diagnostic cause of a wrong answer, None for a correct one.

    wrong_dm: gold is not among the generated hints. [NULL] hints never count
    as wrong_dm, so a wrong answer after them is wrong_im or other.
    wrong_im: the answer matches a hint of the selected indirect memory but
    none of the direct memory. other: anything else.

    Args:
        prediction (Prediction): prediction with its memory trace
        vocab (LabelVocab): label vocabulary

    Returns:
        str | None: cause tag
    """
    if _predicted_label(prediction, vocab) == vocab.lookup(prediction.gold):
        return None
    dm = prediction.trace.dm
    if not dm.is_null and not dm.contains(prediction.gold):
        return "wrong_dm"
    answer = strip_turn_end(prediction.answer_text)
    if normalize_text(answer) and not dm.contains(answer):
        if any(entry.hints.contains(answer) for entry in prediction.trace.im_selected):
            return "wrong_im"
    return "other"


def classify_errors(predictions: Sequence[Prediction], vocab: LabelVocab) -> dict[str, int]:
    """Count wrong predictions per diagnostic cause

    Args:
        predictions (Sequence[Prediction]): predictions with traces
        vocab (LabelVocab): label vocabulary

    Returns:
        dict[str, int]: wrong_dm / wrong_im / other counts
    """
    counts = {cause: 0 for cause in ERROR_CAUSE_DEFINITIONS}
    for prediction in predictions:
        cause = error_cause(prediction, vocab)
        if cause is not None:
            counts[cause] += 1
    return counts


def plot_per_type(report: MetricsReport, path: str | Path) -> None:
    """Bar chart of the per-type metrics

    Args:
        report (MetricsReport): metrics report
        path (str | Path): image file to write
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import seaborn as sns

    frame = (
        report.per_type_frame()
        .drop(columns="n")
        .reset_index()
        .melt(id_vars="question_type", var_name="metric", value_name="score")
    )
    fig, ax = plt.subplots(figsize=(7, 4))
    sns.barplot(data=frame, x="question_type", y="score", hue="metric", ax=ax)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("")
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
