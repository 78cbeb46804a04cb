"""Vectorization settings and code-path selection."""

from __future__ import annotations

import enum
import os
from dataclasses import asdict, dataclass

from flatpool.errors import ConfigInvalid

DEFAULT_SPIN_BUDGET = 10_000
DEFAULT_HEARTBEAT_TIMEOUT = 30.0
SPIN_BUDGET_ENV = "FLATPOOL_SPIN_BUDGET"
HEARTBEAT_TIMEOUT_ENV = "FLATPOOL_HEARTBEAT_TIMEOUT"

BACKENDS = ("serial", "shared")


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not on Linux
        return os.cpu_count() or 1


class CodePath(str, enum.Enum):
    SYNCHRONOUS = "synchronous"
    ASYNC_COPY = "async_copy"
    ASYNC_WHOLE_WORKER = "async_whole_worker"
    ZERO_COPY = "zero_copy"


@dataclass(frozen=True)
class VecConfig:
    """How many environments to run, where, and how to batch them.

    ``batch_size`` counts environment slots per :meth:`recv`; ``None`` means
    all of them (the synchronous path). Slot ``k`` always lives on worker
    ``k // envs_per_worker``.
    """

    backend: str = "serial"
    num_workers: int = 1
    envs_per_worker: int = 1
    batch_size: int | None = None
    zero_copy: bool = False
    seed_base: int = 0
    spin_budget: int | None = None
    heartbeat_timeout: float | None = None
    recv_timeout: float | None = None

    @property
    def num_envs(self) -> int:
        return self.num_workers * self.envs_per_worker

    @property
    def batch(self) -> int:
        return self.num_envs if self.batch_size is None else self.batch_size

    @property
    def workers_per_batch(self) -> int:
        return self.batch // self.envs_per_worker

    def resolved_spin_budget(self) -> int:
        """Explicit value, else the environment variable, else a default.

        The default spins only when every worker plus the controller can own
        a core; on an oversubscribed machine spinning steals the CPU from
        the very worker being waited on, so waits go straight to sleeping.
        """
        if self.spin_budget is not None:
            return int(self.spin_budget)
        if SPIN_BUDGET_ENV in os.environ:
            return int(os.environ[SPIN_BUDGET_ENV])
        if self.backend == "shared" and available_cores() <= self.num_workers:
            return 0
        return DEFAULT_SPIN_BUDGET

    def resolved_heartbeat_timeout(self) -> float:
        if self.heartbeat_timeout is not None:
            return float(self.heartbeat_timeout)
        return float(os.environ.get(HEARTBEAT_TIMEOUT_ENV, DEFAULT_HEARTBEAT_TIMEOUT))

    @property
    def code_path(self) -> CodePath:
        return select_code_path(self)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VecConfig":
        return cls(**d)

    def short(self) -> str:
        zc = " zc" if self.zero_copy else ""
        return f"{self.backend} W={self.num_workers} E={self.envs_per_worker} N={self.batch}{zc}"


def select_code_path(cfg: VecConfig) -> CodePath:
    """Validate ``cfg`` and return the code path it runs on."""
    if cfg.backend not in BACKENDS:
        raise ConfigInvalid(f"unknown backend {cfg.backend!r}; expected one of {BACKENDS}")
    if cfg.num_workers < 1 or cfg.envs_per_worker < 1:
        raise ConfigInvalid("num_workers and envs_per_worker must be >= 1")
    M, N, E = cfg.num_envs, cfg.batch, cfg.envs_per_worker
    if not 1 <= N <= M:
        raise ConfigInvalid(f"batch_size {N} must lie in [1, {M}]")
    if cfg.spin_budget is not None and cfg.spin_budget < 0:
        raise ConfigInvalid("spin_budget must be >= 0")
    if N == M:
        return CodePath.SYNCHRONOUS
    if N % E:
        raise ConfigInvalid(f"batch_size {N} must be a multiple of envs_per_worker {E}")
    if cfg.zero_copy:
        group = N // E
        if cfg.num_workers % group:
            raise ConfigInvalid(
                f"zero-copy needs num_workers ({cfg.num_workers}) divisible by workers per batch ({group})"
            )
        return CodePath.ZERO_COPY
    if N == E:
        return CodePath.ASYNC_WHOLE_WORKER
    return CodePath.ASYNC_COPY
