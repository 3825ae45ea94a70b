class ParameterError(ValueError):
    pass


class StorageError(OSError):
    pass


class NumericError(ArithmeticError):
    pass


class UndefinedMetricError(ValueError):
    pass


class FormatError(ValueError):
    """Raised on a malformed binary file; ``offset`` is where parsing stopped."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
