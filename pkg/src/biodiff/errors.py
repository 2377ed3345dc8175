"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class CorruptCheckpoint(IOError):
    pass


class UnsupportedVersion(IOError):
    def __init__(self, found: int, expected: int):
        super().__init__(
            f"checkpoint format version {found} is not supported (expected {expected})"
        )
        self.found = found
        self.expected = expected


class ParseError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class InvalidLabel(ParseError):
    pass


class EmptyDataset(ValueError):
    pass
