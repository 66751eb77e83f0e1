"""Exception types shared across the package."""


class SiglinkError(Exception):
    """Base class for package-specific errors."""


class EmptyTraceError(SiglinkError):
    """An operation needed a non-empty trace."""


class EmptySignatureError(SiglinkError):
    """A signature ended up with no positive-weight dimensions."""


class ConfigError(SiglinkError):
    """Invalid CLI or pipeline configuration."""
