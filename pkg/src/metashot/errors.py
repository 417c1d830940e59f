"""Exception hierarchy for the engine.

Every validation failure raises a subclass of :class:`EngineError` so the CLI
can map them all to exit code 1 while usage errors stay on argparse's exit 2.
"""


class EngineError(Exception):
    """Base class for all engine-level failures."""


class ShapeError(EngineError):
    """Operand dimensions are inconsistent."""


class DegenerateEmbeddingError(EngineError):
    """A row has (near-)zero norm and cannot be direction-normalized."""


class FormatError(EngineError):
    """A container or manifest on disk is malformed."""


class ConfigError(EngineError):
    """An invalid configuration value or key was supplied."""


class SupportError(EngineError):
    """A class is missing the required number of support shots."""


class SplitError(EngineError):
    """Base/novel split cannot be computed."""


class CacheError(EngineError):
    """The key/value cache is empty or inconsistent."""


class NumericError(EngineError):
    """A non-finite value appeared where a finite one is required."""


class TransferError(EngineError):
    """Source checkpoint and target task are incompatible."""
