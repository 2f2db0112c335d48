"""Exception hierarchy.

Data-shaped problems (bad files, bad values, mismatched shapes) derive from
``DataError``; the CLI maps those to exit code 2.
"""


class PopsynError(Exception):
    pass


class DataError(PopsynError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class BadValue(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class OutOfRange(BadValue):
    pass


class EmptyTable(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyData(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyList(DataError):
    pass


class BadK(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class DegenerateBlock(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class IncompleteReport(PopsynError):
    pass


class CheckpointError(DataError):
    pass


class VersionMismatch(CheckpointError):
    pass


class SchemaFingerprintMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass
