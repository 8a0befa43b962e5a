"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad settings, missing paths, inconsistent design."""


class DataError(ValueError):
    """Data inconsistent with the requested model or file format."""
