"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or unusable run request."""


class DataFormatError(ValueError):
    """Malformed dataset file content."""


class CheckpointError(ValueError):
    """Checkpoint incompatible with the requested model configuration."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
