"""Exception types shared across the package."""


class RankbetError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(RankbetError, ValueError):
    """Malformed input data (CSV schema, field ranges, shape mismatches)."""


class InvalidRandomizationError(RankbetError, ValueError):
    """Treatment probability outside its legal range for the design."""


class BetRangeError(RankbetError, ValueError):
    """Stake outside the interval that keeps the wealth factor nonnegative."""


class ProtocolViolationError(RankbetError, RuntimeError):
    """Commit/reveal discipline broken (reveal without a committed bet, etc.)."""


class AlreadyRevealedError(ProtocolViolationError):
    """Bet committed or reveal requested on a subject whose assignment is known."""


class AlreadyRejectedError(ProtocolViolationError):
    """Mutation attempted on a session that already crossed the wealth boundary."""


class SessionExhaustedError(ProtocolViolationError):
    """No subjects left to bet on."""


class DegenerateDesignError(RankbetError, ValueError):
    """Design matrix is rank deficient beyond repair."""


class ConfigError(RankbetError, ValueError):
    """Invalid policy or simulation configuration."""
