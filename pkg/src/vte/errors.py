"""Exception hierarchy shared across the workbench."""


class VteError(Exception):
    """Base class for all workbench errors."""


class CorpusFormatError(VteError):
    """A record file line failed to parse or violates the record schema."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


class IntegrityError(VteError):
    """Data violates a structural invariant (duplicate ids, misaligned records, ...)."""


class ArityError(VteError):
    """An operation received the wrong number of records."""


class ConfigurationError(VteError):
    """An operation was configured inconsistently."""


class InsufficientWorkError(VteError):
    """Too few eligible pairs remain to assemble a batch."""


class AuthorizationError(VteError):
    """Worker is unknown or below the approval threshold."""


class NotFoundError(VteError):
    """A referenced entity does not exist."""


class ConflictError(VteError):
    """The request conflicts with current service state (closed/expired batch)."""


class ShapeError(VteError):
    """Tensor dimensions do not match the model configuration."""


class FormatError(VteError):
    """A binary or text artifact has an invalid header or layout."""


class DivergenceError(VteError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


class DataError(VteError):
    """An instance lacks data required by the operation (e.g. no references)."""


class UndefinedClassError(VteError):
    """A metric is undefined because a gold class has no instances."""
