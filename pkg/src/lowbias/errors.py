"""Exception types shared across the package."""


class LowBiasError(Exception):
    """Base class for all package errors."""


class InvalidArgument(LowBiasError, ValueError):
    """A caller supplied an argument outside the operation's domain."""


class DataError(LowBiasError, ValueError):
    """Input data could not be parsed or is unusable."""


class DegenerateError(LowBiasError, ArithmeticError):
    """A denominator or scale needed by a formula vanishes."""


class Unavailable(LowBiasError, LookupError):
    """A required derivative moment or correction term was not supplied.

    Raised instead of silently substituting zero.
    """

    def __init__(self, term: str, detail: str = ""):
        self.term = term
        msg = f"unavailable: {term}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
