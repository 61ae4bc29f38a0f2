"""Exception hierarchy.

``DataError`` subclasses map to CLI exit status 2 and ``NumericError``
subclasses to exit status 3.
"""


class KprnError(Exception):
    """Base class for every error raised by this package."""


class DataError(KprnError):
    pass


class NumericError(KprnError):
    pass


class MalformedRecord(DataError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ConflictingType(DataError):
    pass


class UnknownEntity(DataError):
    pass


class InsufficientNegatives(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class NoPaths(DataError):
    pass


class TraceMismatch(KprnError):
    pass


class SnapshotError(DataError):
    pass


class NonFiniteActivation(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass
