"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An argument violated a documented precondition."""


class ConfigurationError(ValueError):
    """An experiment or session configuration is inconsistent."""


class IngestionError(ValueError):
    """A data file could not be parsed; carries row/column position."""

    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"{message} (row {row}, column {column})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericFailureError(RuntimeError):
    """A matrix factorization failed to converge."""

    def __init__(self, operation, detail=""):
        super().__init__(f"{operation} did not converge{': ' + detail if detail else ''}")
        self.operation = operation


class DecodeError(ValueError):
    """A byte stream is not a valid protocol frame; carries a byte offset."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ProtocolError(RuntimeError):
    """A party broke the single-round protocol contract."""


class SessionError(RuntimeError):
    """A federated session could not complete."""


class SessionTimeoutError(SessionError):
    """A party did not hear from its peer within the deadline."""
