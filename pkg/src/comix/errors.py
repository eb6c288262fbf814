"""Shared exception types."""


class ComixError(Exception):
    """Base class for every error raised by this package."""


class FileFormatError(ComixError):
    """Malformed binary file (dataset or checkpoint)."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FileFormatError):
    """File ended before the declared payload was read."""


class ShapeOverflowError(FileFormatError):
    """Declared tensor extents are zero or implausibly large."""


class ConfigError(ComixError):
    """Bad key, bad value, or out-of-range setting in a config file."""
