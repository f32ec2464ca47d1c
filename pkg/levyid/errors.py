"""levyid - Lévy SDE drift identification : Error base class."""


class LevyIdError(Exception):
    """Base class for all errors raised by levyid."""
