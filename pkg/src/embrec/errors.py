"""Exception hierarchy shared by all embrec modules.

The CLI maps these onto exit codes: configuration/input problems exit 2,
operational failures (corruption, missing data, refused reports) exit 1.
"""


class EmbrecError(Exception):
    """Base class for all embrec errors."""


class ConfigError(EmbrecError):
    """Invalid model or scenario configuration."""


class InputError(EmbrecError):
    """Invalid tokens or corpus record."""


class ShapeError(EmbrecError):
    """Tensor shape does not match the operation's contract."""


class LayerRangeError(EmbrecError):
    """Layer index outside the valid range for this model."""


class StoreError(EmbrecError):
    """Base class for activation-store failures."""


class StoreExistsError(StoreError):
    """Target path already contains a store."""


class StoreNotFoundError(StoreError):
    """No store at the given path."""


class StoreModeError(StoreError):
    """Operation not permitted in the handle's mode (or writer lock held)."""


class DuplicateKeyError(StoreError):
    """Key already present in the store."""


class KeyNotFoundError(StoreError):
    """Requested cache key is not in the store."""


class CorruptionError(StoreError):
    """Stored payload failed its integrity check."""


class EquivalenceError(EmbrecError):
    """Benchmark variant output differs from the baseline; report refused."""
