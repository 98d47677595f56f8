"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid parameter combination (bad config key, failed invariant, non-convergence)."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradients; the last good checkpoint is preserved by the caller."""
