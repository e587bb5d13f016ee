"""Exception types shared across modemguard."""


class ModemGuardError(Exception):
    pass


class ConfigError(ModemGuardError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class SchemaError(ModemGuardError, ValueError):
    """File header or structure does not match the expected schema."""


class DomainError(ModemGuardError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NotFoundError(ModemGuardError, KeyError):
    pass


class ModelFormatError(ModemGuardError, ValueError):
    """Model file is unreadable, truncated, or inconsistent with its config."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TrainingDiverged(ModemGuardError, RuntimeError):
    pass
