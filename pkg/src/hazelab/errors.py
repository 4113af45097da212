"""Exception hierarchy shared across the package."""


class HazelabError(Exception):
    """Base class for all package errors."""


class ShapeError(HazelabError, ValueError):
    """Tensor or image shapes do not satisfy an operation's contract."""


class ConfigError(HazelabError, ValueError):
    """Invalid configuration value; message carries the field path."""


class FormatError(HazelabError, ValueError):
    """Malformed or mismatched on-disk file (HZT1, HZW1, PPM/PGM, manifest)."""


class DataError(HazelabError, ValueError):
    """Input data violates a precondition (e.g. nonpositive depth)."""


class NumericError(HazelabError, RuntimeError):
    """Non-finite values where finite ones are required (e.g. training loss)."""
