"""Exception types raised across the pipeline.

Data-quality problems (bad corpus contents, degenerate class layouts) and
caller-contract violations (shape mismatches, bad labels) get distinct
classes so the CLI can map them to exit codes.
"""


class OpclassError(Exception):
    """Base class for all errors raised by this package."""


class EmptySequenceError(OpclassError):
    """An opcode file produced no tokens."""


class MalformedNameError(OpclassError):
    """A filename does not follow the family_sampleid.opcode convention."""


class NoSamplesError(OpclassError):
    """A corpus directory yielded zero usable samples."""


class ClassTooSmallError(OpclassError):
    """A class has too few samples (or too few classes exist) to split."""


class SingleClassError(OpclassError):
    """An operation requiring at least two classes received one."""


class EmptyVocabularyError(OpclassError):
    """Vocabulary construction saw no tokens at all."""


class TooFewRowsError(OpclassError):
    """Scaler fitting needs at least two rows."""


class DimensionMismatchError(OpclassError):
    """Row or column dimensionality does not match the fitted artifact."""


class ShapeMismatchError(OpclassError):
    """A tensor shape is inconsistent with the layer or model."""


class LengthTooShortError(OpclassError):
    """A sequence is too short for the requested pooling window."""


class LabelOutOfRangeError(OpclassError):
    """A class label falls outside [0, num_classes)."""


class LengthMismatchError(OpclassError):
    """Paired label lists have different lengths."""


class EmptyMatrixError(OpclassError):
    """A confusion matrix with zero total count cannot be summarized."""


class NonFiniteLossError(OpclassError):
    """The scheduler was stepped with a NaN or infinite loss."""


class IncompatibleArtifactError(OpclassError):
    """A persisted artifact has an unsupported format or version."""


class ConfigError(OpclassError):
    """A run configuration file is invalid or contains unknown keys."""
