"""Exception types shared across the package.

The CLI maps a subset of these to stable exit codes (see cli.EXIT_CODES);
everything else surfaces as a generic failure.
"""


class ShiftclassError(Exception):
    """Base class for all package errors."""


class ConfigError(ShiftclassError):
    """Bad usage or configuration (CLI exit 2)."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class DataFormatError(ShiftclassError):
    """Malformed dataset bytes: bad magic, truncation, record size,
    or image/label count mismatch (CLI exit 5)."""


class DegenerateSampleError(ShiftclassError):
    """A sample that cannot be normalized or measured (all-zero vector)."""


class DimensionError(ShiftclassError):
    """Shape disagreement between operands, or an image too small to use."""


class StratificationError(ShiftclassError):
    """A class has too few samples for a stratified split."""


class TrainingError(ShiftclassError):
    """Training cannot proceed (e.g. a single-class training set)."""


class DivergenceError(TrainingError):
    """The objective became non-finite during training."""

    def __init__(self, epoch: int, message: str | None = None):
        super().__init__(message or f"objective became non-finite at epoch {epoch}")
        self.epoch = epoch


class ModelModeError(ShiftclassError):
    """Operation requires the other model representation (real vs pow2;
    CLI exit 4)."""


class Pow2RangeError(ShiftclassError):
    """Power-of-two exponent outside the supported range."""


class ScaleError(ShiftclassError):
    """Fraction-bit count F too small for the matrix it serves."""


class AccumulatorOverflowError(ShiftclassError):
    """A checked integer accumulator exceeded its declared bit width."""


class EmptyCandidatesError(ShiftclassError):
    """No threshold candidates exist (all-zero dictionary)."""


class SelectionError(ShiftclassError):
    """Model selection has no viable candidate (CLI exit 3)."""
