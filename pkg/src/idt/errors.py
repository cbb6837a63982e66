"""Shared error taxonomy. Everything raised on purpose derives from IdtError."""


class IdtError(Exception):
    pass


class ShapeError(IdtError):
    """Operand shapes or lengths are incompatible."""


class ConfigError(IdtError):
    """A configuration value is out of range or inconsistent."""


class ContractError(IdtError):
    """A caller violated an API precondition."""


class DomainError(IdtError):
    """Numeric-domain violation: non-finite values where finite ones are required."""


class GenerationError(IdtError):
    """Procedural generation could not satisfy its constraints."""


class EmbeddingKeyError(IdtError, KeyError):
    """A file-backed embedding provider has no entry for the requested content."""
