"""Exception hierarchy shared by every module."""


class ShuffleDPError(Exception):
    """Base class for all library errors."""


class InputError(ShuffleDPError, ValueError):
    """Caller supplied data outside the operation's domain."""


class ConfigurationError(ShuffleDPError, ValueError):
    """A parameter combination cannot be instantiated."""


class InfeasibleError(ConfigurationError):
    """The requested privacy budget cannot be met.

    Attributes:
      reason: short human-readable description of the binding constraint.
      min_n: smallest user count that would make the request feasible, when
        one exists.
    """

    def __init__(self, reason: str, min_n: int | None = None):
        super().__init__(reason if min_n is None else f"{reason} (needs n >= {min_n})")
        self.reason = reason
        self.min_n = min_n


class ResourceError(ShuffleDPError, MemoryError):
    """An encoding would exceed its configured memory cap."""


class OverflowBudgetError(ShuffleDPError, ArithmeticError):
    """Too many homomorphic additions for the plaintext group."""


class OnionError(ShuffleDPError):
    """An onion layer failed authenticated decryption."""


class ProtocolAbort(ShuffleDPError, RuntimeError):
    """A multi-party sub-protocol stopped; ``step`` names where."""

    def __init__(self, step: str, detail: str = ""):
        super().__init__(f"{step}: {detail}" if detail else step)
        self.step = step
        self.detail = detail
