# errors.py

"""
Exception hierarchy shared by every module of the toolkit.

Module-specific errors subclass these and live next to the code that
raises them, so callers can catch either the precise error or the
common ``ProfileSphereError`` root.
"""


class ProfileSphereError(Exception):
    """Root of every error raised by the toolkit."""
    pass


class ParameterError(ProfileSphereError, ValueError):
    """An argument is outside its documented range."""
    pass


class ShapeError(ProfileSphereError, ValueError):
    """Array dimensions do not match what the operation expects."""
    pass


class NumericError(ProfileSphereError, ArithmeticError):
    """A numerical routine failed or produced an impossible value."""
    pass


class InsufficientDataError(ProfileSphereError):
    """Too few samples to run the requested estimation."""
    pass
