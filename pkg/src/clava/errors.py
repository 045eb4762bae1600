"""Exception hierarchy.

Every error names the offending table/column/row where one exists so that the
CLI can print it verbatim.
"""


class ClavaError(Exception):
    """Base class for all library errors."""


# schema / validation (CLI exit code 2)
class SchemaError(ClavaError):
    pass


class MissingTable(SchemaError):
    pass


class DuplicatePrimaryKey(SchemaError):
    pass


class DanglingForeignKey(SchemaError):
    pass


class CycleDetected(SchemaError):
    pass


class TypeParseError(SchemaError):
    pass


class UnknownTable(SchemaError):
    pass


class Disconnected(SchemaError):
    pass


# encoding
class EncodeError(ClavaError):
    pass


class EmptyTable(EncodeError):
    pass


class DimensionMismatch(EncodeError):
    pass


# clustering
class ClusterError(ClavaError):
    pass


class OrphanChildRow(ClusterError):
    pass


class InsufficientRows(ClusterError):
    pass


# training (CLI exit code 3)
class TrainingError(ClavaError):
    pass


class BadRange(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    pass


class LabelOutOfRange(TrainingError):
    pass


# synthesis
class UnseenLabel(ClavaError):
    def __init__(self, label, seen):
        super().__init__(f"label {label} has no fitted group-size histogram (seen: {sorted(seen)})")
        self.label = label
        self.seen = tuple(sorted(seen))


class EmptyVersion(ClavaError):
    pass


# metrics
class MetricError(ClavaError):
    pass


class EmptySample(MetricError):
    pass


class EmptyHistogram(MetricError):
    pass


class EmptyInput(MetricError):
    pass
