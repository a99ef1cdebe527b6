"""Exception hierarchy.

Every error carries a module-qualified ``code`` (e.g. ``datamodel.BadMagic``)
and an ``exit_code`` used by the command-line front end.
"""


class KeystepGraphError(Exception):
    module = "keystep_graph"
    exit_code = 1

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


class DataError(KeystepGraphError):
    exit_code = 3


# datamodel
class MissingFile(DataError):
    module = "datamodel"


class SchemaViolation(DataError):
    module = "datamodel"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class LabelOutOfRange(DataError):
    module = "datamodel"


class UnsortedSegments(DataError):
    module = "datamodel"


class BadMagic(DataError):
    module = "datamodel"


class TruncatedFile(DataError):
    module = "datamodel"


class NonFiniteValue(DataError):
    module = "datamodel"

    def __init__(self, path, row: int, col: int):
        super().__init__(f"{path}: non-finite value at row {row}, col {col}")
        self.row = row
        self.col = col


# graph_builder
class EmptyTake(DataError):
    module = "graph_builder"


class ViewSegmentMismatch(DataError):
    module = "graph_builder"


class MissingTextFeatures(DataError):
    module = "graph_builder"


# autodiff
class ShapeMismatch(KeystepGraphError, ValueError):
    module = "autodiff"

    def __init__(self, op: str, *shapes):
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.shapes = shapes


class NonScalarLoss(KeystepGraphError, ValueError):
    module = "autodiff"


# gnn_model
class DimMismatch(DataError):
    module = "gnn_model"


class CheckpointError(DataError):
    module = "gnn_model"


# trainer
class TooFewTakes(DataError):
    module = "trainer"


class DivergedLoss(KeystepGraphError):
    module = "trainer"
    exit_code = 4


# metrics
class EmptyRecords(DataError):
    module = "metrics"
