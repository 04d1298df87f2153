"""Exception taxonomy shared across the package.

The CLI maps each class to a distinct exit code, so library code should raise
the most specific type that applies.
"""


class SdpseError(Exception):
    """Base class for all package errors."""


class ValidationError(SdpseError):
    """Malformed input: schema violations, bad references, bad parameters."""


class UnobservableError(SdpseError):
    """The measurement set cannot pin down the state."""


class SolverError(SdpseError):
    """The embedded solver failed to produce a usable iterate."""


class RankRecoveryError(SolverError):
    """The solved W is too far from rank one to trust the extracted state."""


class BudgetExceededError(SdpseError):
    """A combinatorial search exceeded its configured budget."""
