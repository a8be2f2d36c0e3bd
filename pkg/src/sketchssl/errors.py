"""Exception hierarchy.

Errors are grouped by how the command line maps them to exit codes:
``DataError`` -> 2, ``NumericalError`` -> 3, ``UsageError`` -> 1.
"""


class SketchSSLError(Exception):
    """Base class for every error raised by this package."""


class UsageError(SketchSSLError):
    pass


class DataError(SketchSSLError):
    pass


class NumericalError(SketchSSLError):
    pass


# stroke_core
class EmptyInput(DataError):
    pass


class NonFiniteCoordinate(DataError):
    pass


class InvalidSequence(DataError):
    pass


class DegenerateCanvas(DataError):
    pass


class NegativeEpsilon(DataError):
    pass


# rasterizer
class UnnormalizedInput(DataError):
    pass


class InvalidRasterConfig(DataError):
    pass


class BatchItemError(DataError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"item {index}: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause


# data
class MalformedRecord(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class EmptyFile(DataError):
    pass


class UnknownClassName(DataError):
    pass


class EmptyAlphabet(DataError):
    pass


class TooFewClasses(DataError):
    pass


# models / losses
class ShapeMismatch(DataError):
    pass


class MissingTargets(DataError):
    pass


class EmptyMask(DataError):
    pass


class SequenceTooLong(DataError):
    pass


class LengthMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


# pretrain
class EmptyDataset(DataError):
    pass


class DivergedLoss(NumericalError):
    pass


class CorruptCheckpoint(DataError):
    pass


class VersionMismatch(DataError):
    pass


# downstream
class ModalityMismatch(DataError):
    pass


class UnknownDepth(DataError):
    pass


class ClassMismatch(DataError):
    pass


class InsufficientClassSamples(DataError):
    pass


class EmptyGallery(DataError):
    pass


class FractionTooSmall(DataError):
    pass


class BadAspect(DataError):
    pass


class EmptyFeatures(DataError):
    pass


class EmptyLexicon(DataError):
    pass
