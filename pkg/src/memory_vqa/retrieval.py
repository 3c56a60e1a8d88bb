"""TF-IDF question features and Top-M indirect memory selection"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from memory_vqa.errors import FitError
from memory_vqa.memory import IndirectMemoryEntry

logger = logging.getLogger(__name__)

# lowercase, split on runs of non-alphanumeric characters
TOKEN_PATTERN = r"(?u)[^\W_]+"
# scores are compared at this precision so float noise cannot reorder ties
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class SparseVector:
    """L2-normalized TF-IDF vector as strictly increasing (index, weight) pairs"""

    indices: tuple[int, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.indices) != len(self.weights):
            raise ValueError("indices and weights differ in length")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")

    @property
    def norm(self) -> float:
        """L2 norm"""
        return float(np.linalg.norm(np.asarray(self.weights, dtype=float)))

    def as_dict(self) -> dict[int, float]:
        """index -> weight"""
        return dict(zip(self.indices, self.weights))


class TfidfModel:
    """TF-IDF featurizer: raw term counts, smooth idf
    ln((1 + n) / (1 + df)) + 1, L2-normalized rows."""

    def __init__(self, vectorizer: TfidfVectorizer):
        """Wrap a fitted vectorizer

        Args:
            vectorizer (TfidfVectorizer): fitted vectorizer
        """
        self._vectorizer = vectorizer

    @property
    def vocabulary(self) -> dict[str, int]:
        """token -> column index"""
        return dict(self._vectorizer.vocabulary_)

    @property
    def idf(self) -> dict[str, float]:
        """token -> idf weight"""
        weights = self._vectorizer.idf_
        return {tok: float(weights[i]) for tok, i in self._vectorizer.vocabulary_.items()}

    def transform(self, texts: Sequence[str]) -> list[SparseVector]:
        """Featurize texts; tokens outside the vocabulary are ignored

        Args:
            texts (Sequence[str]): texts to featurize

        Returns:
            list[SparseVector]: one vector per text
        """
        matrix = self._vectorizer.transform(list(texts)).tocsr()
        matrix.sort_indices()
        vectors = []
        for row in range(matrix.shape[0]):
            start, end = matrix.indptr[row], matrix.indptr[row + 1]
            vectors.append(
                SparseVector(
                    indices=tuple(int(i) for i in matrix.indices[start:end]),
                    weights=tuple(float(w) for w in matrix.data[start:end]),
                )
            )
        return vectors


def tokenize(text: str) -> list[str]:
    """Tokens the TF-IDF model sees"""
    return TfidfVectorizer(lowercase=True, token_pattern=TOKEN_PATTERN).build_analyzer()(text)


def fit_tfidf(corpus: Sequence[str]) -> TfidfModel:
    """Fit a TF-IDF model on a corpus of questions

    Args:
        corpus (Sequence[str]): questions

    Raises:
        FitError: empty corpus, or a corpus without a single token

    Returns:
        TfidfModel: fitted model
    """
    if not corpus:
        raise FitError("Cannot fit TF-IDF on an empty corpus")
    vectorizer = TfidfVectorizer(
        lowercase=True,
        token_pattern=TOKEN_PATTERN,
        norm="l2",
        use_idf=True,
        smooth_idf=True,
        sublinear_tf=False,
    )
    try:
        vectorizer.fit(list(corpus))
    except ValueError as err:
        raise FitError(f"Cannot fit TF-IDF: {err}") from err
    return TfidfModel(vectorizer)


def cosine(a: SparseVector, b: SparseVector) -> float:
    """Cosine similarity of two vectors from the same model; 0 for zero vectors

    Args:
        a (SparseVector): first vector
        b (SparseVector): second vector

    Returns:
        float: similarity in [0, 1]
    """
    norm_a, norm_b = a.norm, b.norm
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    weights_b = b.as_dict()
    dot = sum(w * weights_b[i] for i, w in zip(a.indices, a.weights) if i in weights_b)
    return float(min(1.0, max(0.0, dot / (norm_a * norm_b))))


def same_question(a: str, b: str) -> bool:
    """Questions equal up to case and whitespace"""
    return " ".join(a.casefold().split()) == " ".join(b.casefold().split())


def score_entries(query: str, entries: Sequence[IndirectMemoryEntry]) -> list[float]:
    """Cosine similarity of each entry question to the query, with the model
    fitted on the query plus the entry questions of the frame"""
    if not entries:
        return []
    try:
        model = fit_tfidf([query] + [e.question for e in entries])
    except FitError:
        # no tokens anywhere: every similarity is zero
        return [0.0] * len(entries)
    vectors = model.transform([query] + [e.question for e in entries])
    return [cosine(vectors[0], v) for v in vectors[1:]]


def select_indirect_memory(
    query_question: str,
    frame_entries: Sequence[IndirectMemoryEntry],
    m: int,
    exclude_exact: bool = True,
) -> list[IndirectMemoryEntry]:
    """Top-M entries of a frame by TF-IDF cosine similarity to the query

    Args:
        query_question (str): question being answered
        frame_entries (Sequence[IndirectMemoryEntry]): the frame's entries, in
            stored order (ties keep this order)
        m (int): number of entries to keep
        exclude_exact (bool, optional): drop entries asking the query itself.
            Defaults to True.

    Returns:
        list[IndirectMemoryEntry]: at most M entries, most similar first
    """
    if m <= 0 or not frame_entries:
        return []
    scores = score_entries(query_question, frame_entries)
    order = sorted(
        range(len(frame_entries)),
        key=lambda i: (-round(scores[i], SCORE_DECIMALS), i),
    )
    selected = []
    for i in order:
        entry = frame_entries[i]
        if exclude_exact and same_question(entry.question, query_question):
            continue
        selected.append(entry)
        if len(selected) == m:
            break
    logger.debug(
        "Selected %d/%d memory entries for %r", len(selected), len(frame_entries), query_question
    )
    return selected
