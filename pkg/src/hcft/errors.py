"""Exception hierarchy shared by every hcft subsystem."""


class HCFTError(Exception):
    """Base class for all package errors."""


# -- tensors -----------------------------------------------------------------
class ShapeMismatch(HCFTError, ValueError):
    pass


class NotScalar(HCFTError, ValueError):
    pass


class TapeConsumed(HCFTError, RuntimeError):
    pass


class NonFinite(HCFTError, ArithmeticError):
    pass


# -- layers / model ----------------------------------------------------------
class KernelTooLarge(HCFTError, ValueError):
    pass


class ChannelMismatch(HCFTError, ValueError):
    pass


class InvalidRate(HCFTError, ValueError):
    pass


class HeadDivisibility(HCFTError, ValueError):
    pass


class SequenceTooLong(HCFTError, ValueError):
    pass


class ConfigIncompatible(HCFTError, ValueError):
    pass


class CheckpointError(HCFTError, ValueError):
    pass


# -- signal io ---------------------------------------------------------------
class SignalIOError(HCFTError, ValueError):
    pass


class BadMagic(SignalIOError):
    pass


class TruncatedRecord(SignalIOError):
    def __init__(self, record_index, message=None):
        self.record_index = record_index
        super().__init__(message or f"data record {record_index} is truncated")


class InconsistentHeader(SignalIOError):
    pass


class DegenerateScale(SignalIOError):
    pass


class Unquantizable(SignalIOError):
    pass


class RaggedRows(SignalIOError):
    def __init__(self, row_index, message=None):
        self.row_index = row_index
        super().__init__(message or f"row {row_index} has a different number of cells")


class NonNumericCell(SignalIOError):
    def __init__(self, row_index, column_index, value):
        self.row_index = row_index
        self.column_index = column_index
        super().__init__(f"non-numeric cell {value!r} at row {row_index}, column {column_index}")


# -- preprocessing -----------------------------------------------------------
class PreprocessError(HCFTError, ValueError):
    pass


class EdgeOutOfRange(PreprocessError):
    pass


class OrderUnsupported(PreprocessError):
    pass


class SeriesTooShort(PreprocessError):
    pass


class WindowTooLong(PreprocessError):
    pass


class UnsortedAnnotations(PreprocessError):
    pass


class SingleSubject(PreprocessError):
    pass


class ClassTooSmall(PreprocessError):
    pass


class NoRecordings(PreprocessError):
    pass


# -- metrics -----------------------------------------------------------------
class MetricError(HCFTError, ValueError):
    pass


class EmptyMatrix(MetricError):
    pass


class NoPositives(MetricError):
    pass


class NoNegatives(MetricError):
    pass


class ZeroDuration(MetricError):
    pass


class OneClassOnly(MetricError):
    pass


# -- training ----------------------------------------------------------------
class LabelOutOfRange(HCFTError, ValueError):
    pass


class GeometryMismatch(HCFTError, ValueError):
    pass


class MissingCheckpoint(HCFTError, FileNotFoundError):
    pass


class ConfigError(HCFTError, ValueError):
    pass
