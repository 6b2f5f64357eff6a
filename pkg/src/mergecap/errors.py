"""Exception types raised across the package.

Everything derives from MergecapError so callers can catch the whole
family; the CLI maps any of these to a nonzero exit.
"""


class MergecapError(Exception):
    """Base class for all package-specific errors."""


# --- text pipeline ---

class EmptyCaption(MergecapError):
    """Caption contained no tokens after normalization."""


class CorpusEmpty(MergecapError):
    """Vocabulary construction got an empty corpus."""


class UnknownId(MergecapError):
    """Token id outside the vocabulary's id range."""


# --- numeric core ---

class ShapeError(MergecapError):
    """Operand shapes do not agree."""


class SequenceTooShort(MergecapError):
    """Convolution input shorter than the kernel."""


class EmptyInput(MergecapError):
    """Reduction over an empty axis."""


class NumericError(MergecapError):
    """Non-finite values where finite ones are required."""


class EmptyBatch(MergecapError):
    """Loss requested over an empty batch."""


# --- training / decoding ---

class EmptySplit(MergecapError):
    """Train or validation split is empty."""


class TooLarge(MergecapError):
    """Exhaustive search space exceeds the enumeration guard."""


# --- data files ---

class ParseError(MergecapError):
    """Malformed caption line. Carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class FormatError(MergecapError):
    """Bad magic or otherwise corrupt binary payload."""


class TruncatedFile(MergecapError):
    """Binary file ended before its declared payload."""


class DuplicateId(MergecapError):
    """The same image id occurs twice in a feature file."""


class SplitError(MergecapError):
    """Split counts inconsistent with the id list."""


class VersionMismatch(MergecapError):
    """Checkpoint written by an incompatible format version."""


class ShapeMismatch(MergecapError):
    """Checkpoint tensor shapes disagree with its config."""


class VocabMismatch(MergecapError):
    """Checkpoint was trained against a different vocabulary."""


class EmptyCorpus(MergecapError):
    """Metric requested over an empty pair list."""
