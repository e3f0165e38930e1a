"""Exception hierarchy shared across keyface modules."""


class KeyfaceError(Exception):
    """Base class for all keyface errors."""


# core model
class CoeffError(KeyfaceError, ValueError):
    pass


class WrongDimension(CoeffError):
    pass


class OutOfRange(CoeffError):
    pass


class NonFinite(CoeffError):
    pass


class UnknownChannel(CoeffError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class LengthMismatch(KeyfaceError, ValueError):
    pass


class InvalidScript(KeyfaceError, ValueError):
    pass


# prompt engine
class NoKeyframes(InvalidScript):
    pass


class MalformedSection(InvalidScript):
    pass


class IndexOutOfRange(KeyfaceError, ValueError):
    pass


class MissingSystemPrompt(KeyfaceError, ValueError):
    pass


class KeyframeCountMismatch(KeyfaceError, ValueError):
    pass


# llm gateway
class GatewayError(KeyfaceError):
    pass


class Transport(GatewayError):
    pass


class AuthRejected(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class EmptyResponse(GatewayError):
    pass


class Unparseable(GatewayError, ValueError):
    pass


class OutputWrongDimension(Unparseable, WrongDimension):
    """A bare numeric array of the wrong length came back from the model."""


# pipeline
class InvalidDraft(KeyfaceError):
    pass


class InvalidEdit(KeyfaceError, ValueError):
    pass


class Aborted(KeyfaceError):
    """The user rejected the draft script."""


class KeyframeGenerationError(KeyfaceError):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"keyframe {index}: {type(cause).__name__}: {cause}")


# animation io
class NonMonotoneTimes(KeyfaceError, ValueError):
    pass


class BadWindow(KeyfaceError, ValueError):
    pass


class HeaderMismatch(KeyfaceError, ValueError):
    pass


class RowParse(KeyfaceError, ValueError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


# evaluation
class TooFewSamples(KeyfaceError, ValueError):
    pass


class DimensionMismatch(KeyfaceError, ValueError):
    pass


class EigenFailure(KeyfaceError, ArithmeticError):
    pass


class EmptySet(KeyfaceError, ValueError):
    pass


class ShapeMismatch(KeyfaceError, ValueError):
    pass


class BadK(KeyfaceError, ValueError):
    pass


class DegenerateBatch(KeyfaceError, ValueError):
    pass


class InsufficientData(KeyfaceError, ValueError):
    pass


# dataset tools
class DatasetError(KeyfaceError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaViolation(DatasetError, ValueError):
    pass


class CoeffInvalid(DatasetError, ValueError):
    pass


class TooFewRecords(KeyfaceError, ValueError):
    pass


class EmptyDataset(KeyfaceError, ValueError):
    pass


class MissingEmotions(KeyfaceError, ValueError):
    pass
