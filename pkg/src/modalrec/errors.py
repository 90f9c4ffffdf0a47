"""Exception taxonomy shared across the engine.

Each class maps to a CLI exit code: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError -> 4.
"""


class ModalrecError(Exception):
    pass


class ConfigError(ModalrecError):
    """Invalid configuration: bad schema, unknown keys, out-of-range values."""


class DataError(ModalrecError):
    """Invalid data files or datasets violating a contract."""


class FormatError(DataError):
    """Bad magic bytes or unsupported version in a binary file."""


class CorruptionError(DataError):
    """Truncated or internally inconsistent binary payload."""


class NumericError(ModalrecError):
    """Non-finite loss or gradient; training aborted."""
