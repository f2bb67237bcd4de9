"""Exception types shared across the toolkit.

All data/computation failures derive from :class:`InterplabError` so the CLI
can map them to a single exit code. Argument-validation failures use plain
``ValueError``/``TypeError``.
"""


class InterplabError(Exception):
    """Base class for data and computation errors."""


class CheckpointFormatError(InterplabError):
    """Checkpoint file does not conform to the LSCP layout (bad magic/version/header)."""


class CheckpointCorruptionError(CheckpointFormatError):
    """Structurally valid header, but the payload is truncated, oversized or overlapping."""


class UnsupportedDtypeError(CheckpointFormatError):
    """Checkpoint declares a tensor dtype other than little-endian f32."""


class CompatibilityError(InterplabError):
    """Two parameter sets cannot be combined elementwise."""


class MissingTensorError(CompatibilityError):
    """Name sets differ between two parameter sets."""

    def __init__(self, only_in_a: list[str], only_in_b: list[str]):
        self.only_in_a = only_in_a
        self.only_in_b = only_in_b
        parts = []
        if only_in_a:
            parts.append(f"only in first: {sorted(only_in_a)}")
        if only_in_b:
            parts.append(f"only in second: {sorted(only_in_b)}")
        super().__init__("tensor name mismatch; " + "; ".join(parts))


class ShapeMismatchError(CompatibilityError):
    """Same tensor name has different shapes in two parameter sets."""

    def __init__(self, name: str, shape_a: tuple, shape_b: tuple):
        self.name = name
        self.shape_a = shape_a
        self.shape_b = shape_b
        super().__init__(f"tensor {name!r} has shape {shape_a} vs {shape_b}")


class DegenerateDirectionError(InterplabError):
    """A direction vector has zero norm; angle diagnostics are undefined."""


class EvaluationError(InterplabError):
    """The pluggable evaluator failed at a grid point."""


class MissingReferenceError(InterplabError):
    """No reference-coordinate record exists for a normalization group."""


class DegenerateReferenceError(InterplabError):
    """A normalization reference value is zero or negative."""


class EmptyGroupError(InterplabError):
    """An aggregation group contains no records."""


class InsufficientSeedsError(InterplabError):
    """Variance profiles need at least two samples per coordinate."""


class IncompleteGridError(InterplabError):
    """A surface operation requires a complete rectangular grid of values."""
