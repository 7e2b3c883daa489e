"""Opcode corpus handling.

Reads directories of ``.opcode`` files into labeled token sequences.  Each
file holds one disassembled sample, one instruction per line; the leading
mnemonic is kept and operands are dropped.  Family labels come from the
``family_sampleid.opcode`` filename convention.  Also provides deterministic
stratified splits and a synthetic corpus generator used for desk-scale
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ClassTooSmallError,
    EmptySequenceError,
    MalformedNameError,
    NoSamplesError,
)

OPCODE_EXT = ".opcode"


@dataclass(frozen=True)
class OpcodeSequence:
    """An ordered run of opcode mnemonics with operands stripped."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        for t in self.tokens:
            if not t or any(ch.isspace() for ch in t):
                raise ValueError(f"invalid opcode token: {t!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabeledSample:
    """One corpus entry: an opcode sequence tagged with its malware family."""

    family: str
    sample_id: str
    sequence: OpcodeSequence


@dataclass(frozen=True)
class Corpus:
    """Immutable sample collection with a deterministic family→id mapping."""

    samples: tuple[LabeledSample, ...]
    class_index: dict[str, int]
    skipped: int = 0

    @property
    def families(self) -> list[str]:
        """Family names in class-id order."""
        return sorted(self.class_index, key=self.class_index.get)

    def labels(self) -> np.ndarray:
        """Integer class id per sample, aligned with ``samples`` order."""
        return np.array([self.class_index[s.family] for s in self.samples], dtype=np.int64)

    def sequences(self) -> list[OpcodeSequence]:
        return [s.sequence for s in self.samples]


def make_corpus(samples: list[LabeledSample], skipped: int = 0) -> Corpus:
    """Build a Corpus, deriving the class index from the distinct families.

    Families are numbered 0..K-1 in ascending lexicographic order so the
    mapping is reproducible regardless of sample order.
    """
    seen = set()
    for s in samples:
        key = (s.family, s.sample_id)
        if key in seen:
            raise ValueError(f"duplicate sample identity: {key}")
        seen.add(key)
    families = sorted({s.family for s in samples})
    class_index = {fam: i for i, fam in enumerate(families)}
    return Corpus(samples=tuple(samples), class_index=class_index, skipped=skipped)


def parse_opcode_file(text: str) -> OpcodeSequence:
    """Extract the opcode sequence from raw ``.opcode`` file contents.

    Each non-empty line contributes its first whitespace-delimited token,
    lowercased; the rest of the line (operands) is discarded.

    Raises EmptySequenceError when no tokens result, so the caller can
    decide whether to skip the sample or abort.
    """
    tokens = []
    for line in text.splitlines():
        parts = line.split()
        if parts:
            tokens.append(parts[0].lower())
    if not tokens:
        raise EmptySequenceError("no opcode tokens found")
    return OpcodeSequence(tokens=tuple(tokens))


def render_opcode_file(sequence: OpcodeSequence) -> str:
    """Inverse of parse_opcode_file: one token per line, trailing newline."""
    return "\n".join(sequence.tokens) + "\n"


def label_from_filename(name: str) -> tuple[str, str]:
    """Split ``family_sampleid.opcode`` into (family, sample_id).

    The split happens at the last underscore, so family names may themselves
    contain underscores (``apt_28_012.opcode`` → ``("apt_28", "012")``).
    """
    if not name.endswith(OPCODE_EXT):
        raise MalformedNameError(f"not an {OPCODE_EXT} file: {name!r}")
    stem = name[: -len(OPCODE_EXT)]
    family, sep, sample_id = stem.rpartition("_")
    if not sep or not family or not sample_id:
        raise MalformedNameError(f"expected family_sampleid{OPCODE_EXT}, got {name!r}")
    return family, sample_id


def load_corpus(root: str | Path) -> Corpus:
    """Load every ``.opcode`` file under ``root`` (non-recursive).

    Files are processed in lexicographic filename order so the resulting
    corpus is independent of filesystem enumeration order.  Files with
    malformed names or empty contents are skipped and counted in
    ``Corpus.skipped`` rather than aborting the load.
    """
    root = Path(root)
    if not root.is_dir():
        raise NoSamplesError(f"corpus directory not found: {root}")
    samples = []
    skipped = 0
    for path in sorted(root.glob(f"*{OPCODE_EXT}"), key=lambda p: p.name):
        try:
            family, sample_id = label_from_filename(path.name)
            sequence = parse_opcode_file(path.read_text(encoding="utf-8"))
        except (MalformedNameError, EmptySequenceError):
            skipped += 1
            continue
        samples.append(LabeledSample(family=family, sample_id=sample_id, sequence=sequence))
    if not samples:
        raise NoSamplesError(f"no usable {OPCODE_EXT} files in {root}")
    return make_corpus(samples, skipped=skipped)


@dataclass(frozen=True)
class SplitIndices:
    """Row indices of a train/test partition, plus the seed that made it."""

    train: tuple[int, ...]
    test: tuple[int, ...]
    seed: int


def stratified_split(labels, test_fraction: float, seed: int) -> SplitIndices:
    """Deterministic per-class train/test split of row indices.

    Within each class the rows are shuffled by a generator seeded from
    ``seed``, then ``floor(count * test_fraction)`` rows (at least one, so no
    class goes untested) move to the test side.  Identical seeds give
    identical splits.

    Raises ClassTooSmallError when fewer than two classes are present or any
    class has fewer than two samples.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ClassTooSmallError(f"need at least 2 classes to split, got {len(classes)}")
    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    train_idx: list[int] = []
    for c in classes:
        rows = np.flatnonzero(labels == c)
        if len(rows) < 2:
            raise ClassTooSmallError(f"class {c} has {len(rows)} sample(s), need >= 2")
        rows = rng.permutation(rows)
        n_test = max(1, int(len(rows) * test_fraction))
        test_idx.extend(rows[:n_test].tolist())
        train_idx.extend(rows[n_test:].tolist())
    return SplitIndices(train=tuple(sorted(train_idx)), test=tuple(sorted(test_idx)), seed=seed)


# Mnemonic pool for synthetic corpora; extended with generated names when a
# larger vocabulary is requested.
_MNEMONICS = (
    "mov", "push", "pop", "call", "ret", "add", "sub", "xor", "cmp", "jmp",
    "jz", "jnz", "lea", "test", "nop", "inc", "dec", "and", "or", "shl",
    "shr", "mul", "div", "int",
)

# Probability mass an emitted token is the class signature opcode; the
# remainder is spread uniformly over the whole vocabulary.
_SIGNATURE_WEIGHT = 0.4


def synthetic_vocab(vocab_size: int) -> list[str]:
    """The deterministic token pool used by generate_synthetic_corpus."""
    vocab = list(_MNEMONICS[:vocab_size])
    vocab += [f"op{i}" for i in range(len(vocab), vocab_size)]
    return vocab


def generate_synthetic_corpus(
    n_classes: int,
    samples_per_class: int,
    seq_len: int,
    vocab_size: int,
    seed: int,
) -> Corpus:
    """Generate a statistically separable labeled corpus.

    Class ``c`` emits its signature opcode (the c-th vocabulary entry) with
    elevated probability and everything else uniformly, so even 1-gram
    frequencies separate the classes.  Fully deterministic per seed.
    """
    if min(n_classes, samples_per_class, seq_len, vocab_size) < 1:
        raise ValueError("all counts must be >= 1")
    if vocab_size < n_classes:
        raise ValueError(f"vocab_size {vocab_size} < n_classes {n_classes}")
    vocab = synthetic_vocab(vocab_size)
    rng = np.random.default_rng(seed)
    base = (1.0 - _SIGNATURE_WEIGHT) / vocab_size
    samples = []
    for c in range(n_classes):
        probs = np.full(vocab_size, base)
        probs[c] += _SIGNATURE_WEIGHT
        for i in range(samples_per_class):
            ids = rng.choice(vocab_size, size=seq_len, p=probs)
            tokens = tuple(vocab[j] for j in ids)
            samples.append(
                LabeledSample(
                    family=f"class{c}",
                    sample_id=f"{i:03d}",
                    sequence=OpcodeSequence(tokens=tokens),
                )
            )
    return make_corpus(samples)
