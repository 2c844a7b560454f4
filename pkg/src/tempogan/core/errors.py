"""Exception types shared across the pipeline."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys, schema violations and malformed overrides."""


class SolverError(RuntimeError):
    """Raised when the pressure solve does not reach its tolerance."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class TrainingError(RuntimeError):
    """Raised when training cannot continue (non-finite loss, empty batch)."""

    def __init__(self, message: str, last_checkpoint: Path | None = None) -> None:
        suffix = f"; last good checkpoint: {last_checkpoint}" if last_checkpoint else ""
        super().__init__(message + suffix)
        self.last_checkpoint = last_checkpoint


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be loaded for the requested configuration."""


class MemoryBudgetError(RuntimeError):
    """Raised when an inference pass would exceed the configured cell budget."""

    def __init__(self, message: str, suggested_core: int) -> None:
        super().__init__(f"{message}; retry with a tile plan of core size {suggested_core}")
        self.suggested_core = suggested_core
