"""Exception hierarchy shared by every fed-dpgan module."""

from typing import Optional


class FedDPGANError(Exception):
    """Base class for all simulator errors."""


class StructuralError(FedDPGANError):
    """Shapes, layouts or model specs do not fit together."""


class ParameterError(FedDPGANError, ValueError):
    """An argument is outside its documented range."""


class DataError(FedDPGANError):
    """A dataset or shard cannot be used (empty, malformed file, ...)."""


class ProtocolError(FedDPGANError):
    """The federated protocol cannot proceed (no updates, round mismatch, ...)."""


class ComparisonError(FedDPGANError):
    """Reports cannot be compared."""


class ConfigError(FedDPGANError):
    """An experiment document failed validation."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        prefix = f"{key_path}: " if key_path else ""
        super().__init__(f"{prefix}{message}")


class ExperimentError(FedDPGANError):
    """A pipeline stage failed; `stage` names where."""

    def __init__(self, stage: str, message: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.message = message
        self.cause = cause
        super().__init__(f"[{stage}] {message}")
