"""Exception hierarchy shared by all ctisqa modules."""


class CtisError(Exception):
    """Base class for every error raised by ctisqa."""


# container / feature-store
class ContainerError(CtisError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(ContainerError):
    pass


class VersionMismatch(ContainerError):
    pass


class TruncatedPayload(ContainerError):
    pass


class NonFiniteValue(ContainerError):
    pass


class ChecksumMismatch(ContainerError):
    pass


class InvalidShape(CtisError, ValueError):
    pass


# global stream / ppm / fusion
class EmptyInput(CtisError, ValueError):
    pass


class TooFewPoints(CtisError, ValueError):
    pass


class DimensionMismatch(CtisError, ValueError):
    pass


class NonDivisibleConfig(CtisError, ValueError):
    pass


class AllMaskedInput(CtisError, ValueError):
    pass


# cprt engine
class SchemaError(CtisError, ValueError):
    pass


class DuplicateKey(SchemaError):
    def __init__(self, key):
        super().__init__(f"duplicate element key: {key!r}")
        self.key = key


class UnknownDimension(SchemaError):
    pass


class EmptyOptions(SchemaError):
    pass


class ExtractorUnreachable(CtisError):
    pass


class MalformedExtractorReply(CtisError):
    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class MalformedReviewFile(CtisError, ValueError):
    pass


# dataset builder
class RealizerFailure(CtisError):
    pass


class QuestionBankMismatch(CtisError, ValueError):
    pass


class InfeasibleTargets(CtisError, ValueError):
    pass


# metrics / file formats
class EmptyInputText(CtisError, ValueError):
    pass


class UnknownPairId(CtisError, KeyError):
    pass


class FileFormatError(CtisError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
