"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration and domain problems exit
with 2, synthesis/solver failures with 3.
"""


class ConfigurationError(ValueError):
    """Inconsistent problem data: bad dimensions, invalid matrices, bad config."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class SynthesisError(RuntimeError):
    """Feedback synthesis failed (Riccati iteration diverged, unstable loop)."""
