"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class InstabilityError(RuntimeError):
    """A field, auxiliary variable or prediction became non-finite (CLI exit code 3).

    ``partial`` carries whatever probe record was collected before the abort.
    """

    def __init__(self, message: str, step: int | None = None, partial=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
        self.partial = partial


class TrainingDiverged(RuntimeError):
    """Validation loss grew past the divergence limit during training."""
