"""Exception hierarchy shared by every flatpool module."""

from __future__ import annotations


class FlatpoolError(Exception):
    """Base class for all library errors."""


# -- spaces / codec ---------------------------------------------------------


class InvalidSpace(FlatpoolError, ValueError):
    pass


class UnsupportedSpace(FlatpoolError, ValueError):
    pass


class ShapeMismatch(FlatpoolError, ValueError):
    """A value does not conform to its space."""

    def __init__(self, message: str, path: tuple = ()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"{message} (at {where})")


class LengthMismatch(FlatpoolError, ValueError):
    pass


class RangeError(FlatpoolError, ValueError):
    """A decoded discrete component lies outside [0, n)."""


# -- emulation --------------------------------------------------------------


class ShapeCheckFailed(FlatpoolError, ValueError):
    """First-batch validation found a non-conforming observation."""

    def __init__(self, agent_id, path: tuple, reason: str):
        self.agent_id = agent_id
        self.path = tuple(path)
        self.reason = reason
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"agent {agent_id!r}, leaf {where}: {reason}")


class ActionOutOfRange(FlatpoolError, ValueError):
    pass


# -- vectorization ----------------------------------------------------------


class ConfigInvalid(FlatpoolError, ValueError):
    pass


class SpawnFailure(FlatpoolError, RuntimeError):
    pass


class WorkerDead(FlatpoolError, RuntimeError):
    pass


class ProtocolViolation(FlatpoolError, RuntimeError):
    pass


class VecTimeout(FlatpoolError, TimeoutError):
    pass


# -- ocean / autotune -------------------------------------------------------


class UnknownEnv(FlatpoolError, KeyError):
    pass


class NoValidConfig(FlatpoolError, ValueError):
    pass


class MeasurementTooShort(FlatpoolError, RuntimeError):
    def __init__(self, message: str, cycles: int = 0):
        super().__init__(message)
        self.cycles = cycles
