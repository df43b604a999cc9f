"""Exception types shared across the package."""


class NDNSError(Exception):
    """Base class for all package errors."""


class ValidationError(NDNSError, ValueError):
    """Raised when parameters violate a precondition."""


class TruncationError(NDNSError, RuntimeError):
    """Raised when a Fock-space truncation cannot capture the state.

    Attributes
    ----------
    truncation : int or None
        Highest Fock level tried.
    tail : float or None
        Estimated probability left beyond (or at the top of) the truncation.
    """

    def __init__(self, message, truncation=None, tail=None):
        super().__init__(message)
        self.truncation = truncation
        self.tail = tail

    def __reduce__(self):
        return (type(self), (str(self), self.truncation, self.tail))
