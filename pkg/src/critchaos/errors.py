"""Exception types shared across modules."""


class ValidationError(ValueError):
    """A configuration or precondition is violated."""


class UnresolvableMollifier(ValidationError):
    """Mollifier radius is below four lattice spacings."""


class NegativeSpectrum(ArithmeticError):
    """A circulant eigenvalue is negative beyond round-off."""
