class ConfigurationError(ValueError):
    """Invalid configuration or mismatched dimensions."""


class NoUniqueOptimum(ConfigurationError):
    pass


class ContractViolation(ValueError):
    """An input broke an operation's precondition."""
