"""Exception types mapped onto CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration; carries every violation found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalAbort(RuntimeError):
    """A run hit the explosion guard or produced non-finite values."""


class ExplosionError(NumericalAbort):
    """Event-count safety cap exceeded."""
