"""Exception types.

All of them subclass a builtin so callers can keep catching ValueError,
KeyError or RuntimeError.
"""

from __future__ import annotations


class ShapeError(ValueError):
    """Tensor or parameter dimensions do not agree."""


class CorruptFileError(ValueError):
    """A model, policy or corpus file is truncated or malformed."""


class VersionMismatchError(ValueError):
    """A container was written by an incompatible format version."""


class ConfigMismatchError(ValueError):
    """A stored config header disagrees with what the caller expects."""


class UndefinedCorrelationError(ValueError):
    """A rank correlation was requested on a constant sequence."""


class EstimatorServiceError(RuntimeError):
    """The IQ estimation service timed out or broke the wire protocol."""

    def __init__(self, message: str, episode_id: str | None = None):
        self.episode_id = episode_id
        prefix = f"[episode {episode_id}] " if episode_id is not None else ""
        super().__init__(prefix + message)
