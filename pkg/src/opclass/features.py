"""Featurization of opcode sequences.

Two pathways out of the same corpus:

* merged 1-gram + 2-gram count vectors, standardized and optionally
  rebalanced by random oversampling, for the classical classifiers;
* fixed-length integer-id encodings scaled into (0, 1], for the CNN.

Fitted artifacts (vocabulary + scaler) are immutable and serialize to a
versioned JSON document for reuse at inference time.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import LabeledSample, OpcodeSequence
from .errors import (
    DimensionMismatchError,
    EmptyVocabularyError,
    IncompatibleArtifactError,
    SingleClassError,
    TooFewRowsError,
)

FEATURES_FORMAT_VERSION = 1
DEFAULT_NGRAM_ORDERS = (1, 2)


def generate_ngrams(opcodes, n: int) -> list[str]:
    """All overlapping n-token windows, joined with single spaces.

    Returns the empty list when the sequence is shorter than ``n``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if isinstance(opcodes, OpcodeSequence):
        opcodes = opcodes.tokens
    return [" ".join(opcodes[i : i + n]) for i in range(len(opcodes) - n + 1)]


@dataclass(frozen=True)
class NGramVocabulary:
    """Ordered n-gram → column-index mapping over one or more orders.

    Columns are assigned ascending by (order, lexicographic n-gram), so the
    layout is reproducible from the training sequences alone.
    """

    entries: dict[str, int]
    orders: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ngrams(self) -> list[str]:
        """N-gram strings in column order."""
        return sorted(self.entries, key=self.entries.get)


def build_vocabulary(train_sequences, orders=DEFAULT_NGRAM_ORDERS) -> NGramVocabulary:
    """Collect every distinct n-gram of the given orders from training data.

    The vocabulary is fixed after this call; sequences seen later never
    enlarge it.
    """
    orders = tuple(sorted(orders))
    per_order: dict[int, set[str]] = {n: set() for n in orders}
    for seq in train_sequences:
        for n in orders:
            per_order[n].update(generate_ngrams(seq, n))
    entries: dict[str, int] = {}
    for n in orders:
        for gram in sorted(per_order[n]):
            entries[gram] = len(entries)
    if not entries:
        raise EmptyVocabularyError("no n-grams found in training sequences")
    return NGramVocabulary(entries=entries, orders=orders)


def vectorize(sequence: OpcodeSequence, vocab: NGramVocabulary) -> np.ndarray:
    """Raw n-gram counts of one sequence over the vocabulary columns.

    N-grams absent from the vocabulary are silently dropped (fixed
    train-time feature space).
    """
    if not vocab.entries:
        raise EmptyVocabularyError("cannot vectorize with an empty vocabulary")
    row = np.zeros(len(vocab), dtype=np.float64)
    for n in vocab.orders:
        for gram, count in Counter(generate_ngrams(sequence, n)).items():
            col = vocab.entries.get(gram)
            if col is not None:
                row[col] = count
    return row


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense samples×features matrix with an aligned label vector."""

    values: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {self.values.shape}")
        if len(self.labels) != self.values.shape[0]:
            raise ValueError("labels length must match row count")
        if len(self.labels) and not (0 <= self.labels.min() and self.labels.max() < self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "FeatureMatrix":
        """Row subset as a new matrix (labels kept aligned)."""
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureMatrix(
            values=self.values[rows].copy(),
            labels=self.labels[rows].copy(),
            n_classes=self.n_classes,
        )


def vectorize_all(sequences, labels, vocab: NGramVocabulary, n_classes: int) -> FeatureMatrix:
    """Stack vectorize() rows for a list of sequences."""
    rows = np.stack([vectorize(s, vocab) for s in sequences]) if sequences else np.zeros((0, len(vocab)))
    return FeatureMatrix(values=rows, labels=np.asarray(labels, dtype=np.int64), n_classes=n_classes)


@dataclass(frozen=True)
class ScalerParams:
    """Per-column standardization statistics (population variant)."""

    mean: np.ndarray
    scale: np.ndarray


def fit_scaler(train: FeatureMatrix) -> ScalerParams:
    """Column means and population standard deviations of the training data.

    Zero-variance columns get scale 1 so standardization never divides by
    zero (the column just becomes all-zero after centering).
    """
    if train.n_rows < 2:
        raise TooFewRowsError(f"scaler needs >= 2 rows, got {train.n_rows}")
    mean = train.values.mean(axis=0)
    scale = train.values.std(axis=0)  # ddof=0: population std
    # a constant column can still show std ~1e-16 (its computed mean is
    # off by an ulp), so detect constancy by value, not by std == 0
    constant = np.all(train.values == train.values[:1, :], axis=0)
    mean = np.where(constant, train.values[0], mean)
    scale = np.where(constant | (scale == 0.0), 1.0, scale)
    return ScalerParams(mean=mean, scale=scale)


def apply_scaler(matrix: FeatureMatrix, params: ScalerParams) -> FeatureMatrix:
    """Standardize columns by the fitted statistics; labels unchanged."""
    if matrix.n_features != len(params.mean):
        raise DimensionMismatchError(
            f"matrix has {matrix.n_features} columns, scaler was fit on {len(params.mean)}"
        )
    return FeatureMatrix(
        values=(matrix.values - params.mean) / params.scale,
        labels=matrix.labels.copy(),
        n_classes=matrix.n_classes,
    )


def random_oversample(matrix: FeatureMatrix, seed: int) -> FeatureMatrix:
    """Duplicate minority-class rows until every class matches the majority.

    All original rows are retained in their original order; the sampled
    duplicates are appended grouped by ascending class id.  Deterministic
    per seed.
    """
    present = np.unique(matrix.labels)
    if len(present) < 2:
        raise SingleClassError("oversampling needs at least 2 classes present")
    counts = {int(c): int((matrix.labels == c).sum()) for c in present}
    majority = max(counts.values())
    rng = np.random.default_rng(seed)
    extra_rows: list[np.ndarray] = []
    extra_labels: list[int] = []
    for c in present:
        deficit = majority - counts[int(c)]
        if deficit == 0:
            continue
        pool = np.flatnonzero(matrix.labels == c)
        picks = rng.choice(pool, size=deficit, replace=True)
        extra_rows.append(matrix.values[picks])
        extra_labels.extend([int(c)] * deficit)
    if not extra_rows:
        return matrix
    values = np.concatenate([matrix.values] + extra_rows, axis=0)
    labels = np.concatenate([matrix.labels, np.asarray(extra_labels, dtype=np.int64)])
    return FeatureMatrix(values=values, labels=labels, n_classes=matrix.n_classes)


@dataclass(frozen=True)
class SequenceEncoding:
    """Fixed-length numeric encodings of opcode sequences for the CNN.

    Token ids are shifted and scaled to (id+1)/(V+1) so real tokens land in
    (0, 1] while 0 is reserved for padding and unknown tokens.
    """

    matrix: np.ndarray
    labels: np.ndarray
    token_index: dict[str, int]
    length: int


def build_token_index(sequences) -> dict[str, int]:
    """Opcode → contiguous id mapping from training sequences, lexicographic."""
    tokens = set()
    for seq in sequences:
        tokens.update(seq.tokens)
    if not tokens:
        raise EmptyVocabularyError("no tokens found in training sequences")
    return {tok: i for i, tok in enumerate(sorted(tokens))}


def encode_token_row(tokens, token_index: dict[str, int], length: int) -> np.ndarray:
    """One fixed-length row: id i becomes (i+1)/(V+1), unknown and pad are 0.

    Streams longer than `length` are truncated, shorter ones right-padded.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    vocab_size = len(token_index)
    row = np.zeros(length, dtype=np.float64)
    for col, token in enumerate(tokens[:length]):
        idx = token_index.get(token)
        if idx is not None:
            row[col] = (idx + 1) / (vocab_size + 1)
    return row


def encode_sequences(
    samples: list[LabeledSample],
    token_index: dict[str, int],
    length: int,
    class_index: dict[str, int],
) -> SequenceEncoding:
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    matrix = np.zeros((len(samples), length), dtype=np.float64)
    labels = np.empty(len(samples), dtype=np.int64)
    for row, sample in enumerate(samples):
        labels[row] = class_index[sample.family]
        matrix[row] = encode_token_row(sample.sequence.tokens, token_index, length)
    return SequenceEncoding(matrix=matrix, labels=labels, token_index=token_index, length=length)


def featurizer_to_json(vocab: NGramVocabulary, scaler: ScalerParams) -> str:
    """Serialize the fitted vocabulary and scaler as one JSON document."""
    doc = {
        "version": FEATURES_FORMAT_VERSION,
        "orders": list(vocab.orders),
        "entries": vocab.ngrams,
        "mean": scaler.mean.tolist(),
        "scale": scaler.scale.tolist(),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def featurizer_from_json(text: str) -> tuple[NGramVocabulary, ScalerParams]:
    doc = json.loads(text)
    version = doc.get("version")
    if version != FEATURES_FORMAT_VERSION:
        raise IncompatibleArtifactError(
            f"featurizer format version {version!r}, expected {FEATURES_FORMAT_VERSION}"
        )
    entries = {gram: i for i, gram in enumerate(doc["entries"])}
    vocab = NGramVocabulary(entries=entries, orders=tuple(doc["orders"]))
    scaler = ScalerParams(
        mean=np.asarray(doc["mean"], dtype=np.float64),
        scale=np.asarray(doc["scale"], dtype=np.float64),
    )
    if len(scaler.mean) != len(vocab) or len(scaler.scale) != len(vocab):
        raise IncompatibleArtifactError("featurizer mean/scale length does not match vocabulary")
    return vocab, scaler


def save_featurizer(path: str | Path, vocab: NGramVocabulary, scaler: ScalerParams) -> None:
    Path(path).write_text(featurizer_to_json(vocab, scaler), encoding="utf-8")


def load_featurizer(path: str | Path) -> tuple[NGramVocabulary, ScalerParams]:
    return featurizer_from_json(Path(path).read_text(encoding="utf-8"))
