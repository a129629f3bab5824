"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ContractError(ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class UnsupportedRangeError(ValueError):
    """Arguments exceed the envelope a kernel was validated for."""
