"""Exception types shared across the toolkit."""


class HitabError(Exception):
    """Base class for toolkit errors."""


class InputError(HitabError, ValueError):
    """Malformed or inconsistent user input (dimensions, radii, file contents)."""


class NumericError(HitabError, ArithmeticError):
    """A computation produced a non-finite value."""
