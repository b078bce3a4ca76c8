"""Exception types shared across the toolkit."""


class TaoError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(TaoError):
    """Bad input: configuration, file contents or arguments."""


class InvalidProgram(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class BudgetExceeded(TaoError):
    pass


class EmptyTrace(TaoError):
    pass


class MalformedTrace(ValidationError):
    pass


class SequenceMismatch(TaoError):
    def __init__(self, position, expected, found):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(
            f"sequence mismatch at position {position}: expected {expected}, found {found}"
        )


class UnalignedPC(ValidationError):
    pass


class UnknownOpcode(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NoGraph(TaoError):
    pass


class SchemaMismatch(ValidationError):
    pass


class FrozenViolation(TaoError):
    pass


class NegativeLatency(ValidationError):
    pass


class PartitionTooSmall(ValidationError):
    pass


class SpaceTooSmall(ValidationError):
    pass


class NonPSD(ValidationError):
    pass


class DegenerateMetrics(TaoError):
    pass


class ArtifactMismatch(ValidationError):
    """An artifact was produced under a different config or schema hash."""
