"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so stage code should raise the
most specific type that applies.
"""

from __future__ import annotations

__all__ = [
    "ShiftLensError",
    "ValidationError",
    "ConfigError",
    "PairingError",
    "DslError",
    "StageError",
    "StaleArtifactError",
    "ProviderError",
    "SynthesisError",
]


class ShiftLensError(Exception):
    """Base class for all package errors."""


class ValidationError(ShiftLensError):
    """Bad user input: schema, CSV contents, parameter domain violations."""


class ConfigError(ValidationError):
    """Run configuration failed validation."""


class PairingError(ValidationError):
    """Control/test tables could not be paired (e.g. zero shared keys)."""


class DslError(ValidationError):
    """Expression failed to parse or type-check."""


class StageError(ShiftLensError):
    """A pipeline stage could not produce its artifact."""


class StaleArtifactError(StageError):
    """An upstream artifact was built from a different configuration."""


class ProviderError(ShiftLensError):
    """The completion provider failed after retries or returned garbage."""


class SynthesisError(StageError):
    """Feature synthesis produced nothing usable."""
