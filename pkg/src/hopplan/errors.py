"""Exception types shared across the package."""


class HopplanError(Exception):
    """Base class for package errors."""


class DimensionError(HopplanError, ValueError):
    """A vector or matrix does not match the model dimensions."""


class ConfigError(HopplanError, ValueError):
    """Invalid model, task, or run configuration."""


class TerrainCoverageError(HopplanError, ValueError):
    """A query point lies outside the terrain's covered x-range."""


class InfeasibleTaskError(HopplanError, ValueError):
    """The task's initial state is inconsistent (e.g. foot below terrain)."""


class EvaluatorError(HopplanError, RuntimeError):
    """A constraint or objective evaluator produced a non-finite value."""

    def __init__(self, message, constraint_index=None, knot=None, family=None):
        super().__init__(message)
        self.constraint_index = constraint_index
        self.knot = knot
        self.family = family
