"""Exception types shared across the package."""


class LaneGridError(Exception):
    """Base class for all package errors."""


class NoTarget(LaneGridError):
    """Scenario does not contain exactly one target track."""


class DegenerateHeading(LaneGridError):
    """Target heading at the anchor step is unusable (zero-length or padded)."""


class InfeasibleSpec(LaneGridError):
    """Synthetic scenario spec cannot be realized."""


class ParseError(LaneGridError):
    """Scenario file violates the schema; message names the offending field."""


class SchemaVersionMismatch(LaneGridError):
    """File schema version is not supported."""


class EmptyGraph(LaneGridError):
    """No drivable-area node survived the freespace test."""


class EmptyMap(LaneGridError):
    """Scenario has no lanes to build the lane-segment layer from."""


class ShapeMismatch(LaneGridError):
    """Operands have incompatible shapes."""


class NonFiniteValue(LaneGridError):
    """An operation produced NaN or Inf."""


class MissingGrad(LaneGridError):
    """Optimizer step requested but a parameter has no gradient."""


class MissingGTFuture(LaneGridError):
    """Ground-truth future required but absent from the target track."""


# Evaluation-facing alias: refusing a prediction without ground truth.
MissingGT = MissingGTFuture


class ChecksumMismatch(LaneGridError):
    """Checkpoint payload does not match its recorded checksum."""
