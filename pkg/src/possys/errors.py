"""Exceptions shared across the package."""
from __future__ import annotations


class PossysError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(PossysError):
    """Malformed or inconsistent run configuration."""


class SingularSystemError(PossysError):
    """A linear solve hit a (numerically) singular system."""


class EigensolverError(PossysError):
    """Spectral bound could not be computed for this matrix."""


class PowerIterationError(PossysError):
    """Power iteration failed to converge or disagreed with a cross-check.

    Carries the iterate history so the caller can see whether the estimate
    was oscillating or drifting.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class GainValidationError(PossysError):
    """A fitted ISS envelope was violated by a sampled trajectory.

    The offending trial is attached so the failure is reproducible.
    """

    def __init__(self, message: str, trial: int, state=None, signal=None, time=None, gap=None):
        super().__init__(message)
        self.trial = trial
        self.state = state
        self.signal = signal
        self.time = time
        self.gap = gap
