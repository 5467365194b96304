class ConfigurationError(ValueError):
    """Inconsistent or malformed configuration (mismatched lengths, bad fields)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""
