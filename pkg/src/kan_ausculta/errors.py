"""Shared exception types used across the package."""


class ShapeError(ValueError):
    """An array's shape is inconsistent with the declared contract."""


class ContractViolation(RuntimeError):
    """An internal contract was broken, e.g. validation rows reached a train-only path."""


class TrainingAbort(RuntimeError):
    """Training cannot continue (non-finite gradient, diverged parameter)."""

    def __init__(self, message: str, parameter: str | None = None):
        super().__init__(message if parameter is None else f"{message} (parameter: {parameter})")
        self.parameter = parameter


class DataError(RuntimeError):
    """Dataset ingestion or artifact serialization failure."""


class FingerprintError(DataError):
    """A feature-layout fingerprint did not match the expected one."""
