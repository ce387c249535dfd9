"""Exception types shared across the package."""


class SagTwinError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SagTwinError, ValueError):
    pass


class SegmentTooShort(SagTwinError, ValueError):
    pass


class InsufficientSegments(SagTwinError, ValueError):
    pass


class MalformedRow(SagTwinError, ValueError):
    """A CSV row could not be parsed; ``line`` is 1-based and counts the header."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class WindowTooShort(SagTwinError, ValueError):
    pass


class WindowNotFull(SagTwinError, ValueError):
    pass


class InsufficientData(SagTwinError, ValueError):
    pass


class IdentificationFailed(SagTwinError, RuntimeError):
    def __init__(self, message, cost=float("nan")):
        super().__init__(f"{message} (final cost {cost!r})")
        self.cost = cost


class TrainingDiverged(SagTwinError, RuntimeError):
    def __init__(self, message, cost=float("nan")):
        super().__init__(f"{message} (final cost {cost!r})")
        self.cost = cost


class RetrainDeferred(SagTwinError, RuntimeError):
    pass


class AllInfeasible(SagTwinError, RuntimeError):
    def __init__(self, table):
        super().__init__(f"all {len(table)} supervisor candidates are infeasible")
        self.table = table


class UnstablePlantConfig(SagTwinError, RuntimeError):
    pass


class ArtifactError(SagTwinError, ValueError):
    """Model or config file is missing, unreadable or has the wrong format version."""
