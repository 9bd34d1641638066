"""Exception types raised across the package."""


class EhlinkError(Exception):
    """Base class for all package errors."""


class ConfigError(EhlinkError):
    """Bad configuration file or out-of-range parameter (CLI exit code 2)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CausalityError(EhlinkError):
    """A node tried to spend more energy than its battery holds."""


class ProtocolStateError(EhlinkError):
    """Inconsistent retransmission bookkeeping (stored + incoming > packet)."""


class AmbiguousChainError(EhlinkError):
    """Markov chain has no unique stationary distribution."""


class ConvergenceError(EhlinkError):
    """Iterative solver failed to reach its tolerance."""


class DegenerateObservationError(EhlinkError):
    """Observation likelihood is zero for every channel state."""


class CapacityError(EhlinkError):
    """State space exceeds the configured size cap."""
