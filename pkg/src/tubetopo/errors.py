"""Exception hierarchy shared by every tubetopo module.

Each exception carries a stable machine-readable ``code`` (used by the CLI
``--json`` error channel) and maps to a process exit code: data/usage
problems exit 3, violated internal invariants exit 4.
"""


class TubeTopoError(Exception):
    """Base class for all library errors."""

    code = "error"
    exit_code = 3

    def __init__(self, message: str = ""):
        super().__init__(message or self.__doc__)


class ShapeMismatch(TubeTopoError):
    """Operands must share the same grid shape."""

    code = "shape-mismatch"


class EmptyMask(TubeTopoError):
    """Operation requires at least one foreground voxel."""

    code = "empty-mask"


class EmptyQuery(TubeTopoError):
    """Distance query requires a non-empty endpoint set."""

    code = "empty-query"


class EmptySupport(TubeTopoError):
    """Averaging support contains no voxels."""

    code = "empty-support"


class OutOfBounds(TubeTopoError):
    """A seed point lies outside the grid."""

    code = "out-of-bounds"


class LabelOutOfRange(TubeTopoError):
    """Ground-truth label exceeds the channel count."""

    code = "label-out-of-range"


class LabelMismatch(TubeTopoError):
    """Prediction contains labels absent from the configured class list."""

    code = "label-mismatch"


class DimensionMismatch(TubeTopoError):
    """Channel map dimensions are inconsistent with their operands."""

    code = "dimension-mismatch"


class NegativeLoss(TubeTopoError):
    """Loss components must be non-negative."""

    code = "negative-loss"


class UnsupportedDatatype(TubeTopoError):
    """Volume datatype is outside the supported subset."""

    code = "unsupported-datatype"


class CorruptHeader(TubeTopoError):
    """Volume header failed validation."""

    code = "corrupt-header"


class DimensionalityMismatch(TubeTopoError):
    """Volume dimensionality does not fit the requested interpretation."""

    code = "dimensionality-mismatch"


class SchemaViolation(TubeTopoError):
    """JSON document violates its schema."""

    code = "schema-violation"

    def __init__(self, message: str = "", field: str = ""):
        self.field = field
        super().__init__(f"{message} (at {field})" if field else message)


class SpecInfeasible(TubeTopoError):
    """Synthetic network spec could not be realised within its bounds."""

    code = "spec-infeasible"


class InvalidCut(TubeTopoError):
    """Cut parameter falls on a junction or outside its branch."""

    code = "invalid-cut"


class InternalError(TubeTopoError):
    """An internal invariant was violated."""

    code = "internal"
    exit_code = 4
