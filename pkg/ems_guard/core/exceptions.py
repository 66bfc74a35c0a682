"""Exception hierarchy for ems-guard."""

from typing import Any, List, Optional


class EmsGuardError(Exception):
    """Base class for all ems-guard errors."""


class CaseParseError(EmsGuardError):
    """Raised when a case file cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class NetworkValidationError(EmsGuardError):
    """Raised when a parsed network violates a model-level invariant."""


class NumericalError(EmsGuardError):
    """Raised when a linear-algebra step fails (singular system, non-finite values)."""


class DimensionMismatchError(EmsGuardError):
    """Raised when vectors do not match the network they are used with."""

    def __init__(self, what: str, expected: Any, actual: Any):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class AttackConfigurationError(EmsGuardError):
    """Raised for invalid attack parameters (alpha out of range, too many pinned buses)."""


class DetectionError(EmsGuardError):
    """Raised when detection or corrective dispatch is invoked out of contract."""

    def __init__(self, message: str, branches: Optional[List[int]] = None):
        self.branches = branches or []
        super().__init__(message)
