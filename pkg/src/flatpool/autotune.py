"""Empirical search for the fastest vectorization settings on this machine."""

from __future__ import annotations

import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Callable

import numpy as np

from flatpool.errors import ConfigInvalid, MeasurementTooShort, NoValidConfig
from flatpool.vector import CodePath, VecConfig, open_vectorized, select_code_path
from flatpool.vector.config import available_cores

MIN_CYCLES = 100
MIN_DURATION = 1.0


@dataclass(frozen=True)
class TuneConstraints:
    max_workers: int
    batch_size: int
    total_env_budget: int
    min_envs_per_worker: int = 1
    max_envs_per_worker: int = 1
    duration: float = MIN_DURATION
    warmup: int = 2  # full pool cycles
    backend: str = "shared"
    spin_budget: int | None = None

    def __post_init__(self):
        ints = (self.max_workers, self.batch_size, self.total_env_budget,
                self.min_envs_per_worker, self.max_envs_per_worker)
        if min(ints) < 1:
            raise ConfigInvalid("worker, batch, budget and envs-per-worker limits must be >= 1")
        if self.min_envs_per_worker > self.max_envs_per_worker:
            raise ConfigInvalid("min_envs_per_worker exceeds max_envs_per_worker")
        if self.duration < MIN_DURATION:
            raise ConfigInvalid(f"duration must be >= {MIN_DURATION}s")
        if self.warmup < 0:
            raise ConfigInvalid("warmup must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Measurement:
    config: VecConfig
    sps: float
    p50_us: float
    p99_us: float
    cycles: int
    seconds: float

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "sps": self.sps, "p50_us": self.p50_us, "p99_us": self.p99_us}


@dataclass
class TuneReport:
    results: list[Measurement]
    constraints: TuneConstraints
    machine: dict = field(default_factory=dict)

    @property
    def chosen(self) -> VecConfig:
        return self.results[0].config

    @property
    def chosen_path(self) -> CodePath:
        return select_code_path(self.chosen)

    def to_dict(self) -> dict:
        return {
            "machine": self.machine,
            "constraints": self.constraints.to_dict(),
            "results": [m.to_dict() for m in self.results],
            "chosen": self.chosen.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def machine_descriptor() -> dict:
    return {
        "cores": available_cores(),
        "cpu_count": os.cpu_count(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def enumerate_configs(c: TuneConstraints) -> list[VecConfig]:
    """Every valid config within ``c``, ordered by (workers, envs/worker, zero-copy)."""
    N = c.batch_size
    out: list[VecConfig] = []
    seen: set = set()
    for W in range(1, c.max_workers + 1):
        for E in range(c.min_envs_per_worker, c.max_envs_per_worker + 1):
            M = W * E
            if M > c.total_env_budget or N > M:
                continue
            for zero_copy in (False, True):
                if zero_copy and N == M:
                    continue  # a full batch is already a view
                cfg = VecConfig(backend=c.backend, num_workers=W, envs_per_worker=E,
                                batch_size=N, zero_copy=zero_copy, spin_budget=c.spin_budget)
                try:
                    select_code_path(cfg)
                except ConfigInvalid:
                    continue
                if cfg not in seen:
                    seen.add(cfg)
                    out.append(cfg)
    if not out:
        raise NoValidConfig(f"no vectorization config satisfies {c}")
    return out


def measure_config(env_factory: Callable, cfg: VecConfig, duration: float, warmup: int = 2) -> Measurement:
    """Time a no-op-action send/recv loop for ``duration`` seconds.

    ``warmup`` full pool cycles (``M / N`` recvs each) run first, outside
    the timed window. Steps count every slot in every batch.
    """
    with open_vectorized(env_factory, cfg) as vec:
        vec.async_reset(cfg.seed_base)
        actions = np.zeros(vec.action_shape(), dtype=np.int32)
        batch = vec.recv()
        for _ in range(warmup * vec.num_envs // vec.batch_size):
            vec.send(batch.env_slot_ids, actions)
            batch = vec.recv()

        latencies: list[float] = []
        steps = 0
        clock = time.perf_counter
        start = clock()
        end = start + duration
        now = start
        while now < end:
            vec.send(batch.env_slot_ids, actions)
            t0 = clock()
            batch = vec.recv()
            now = clock()
            latencies.append(now - t0)
            steps += len(batch.env_slot_ids)
        elapsed = now - start

    cycles = len(latencies)
    if cycles < MIN_CYCLES:
        raise MeasurementTooShort(
            f"only {cycles} recv cycles in {duration}s for {cfg.short()}; need {MIN_CYCLES}", cycles=cycles,
        )
    p50, p99 = np.percentile(np.asarray(latencies) * 1e6, [50, 99])
    return Measurement(cfg, steps / elapsed, float(p50), float(p99), cycles, elapsed)


def autotune(env_factory: Callable, constraints: TuneConstraints, *, extend_short: bool = True) -> TuneReport:
    """Measure every enumerated config sequentially and rank by steps/sec.

    With ``extend_short``, a config that completes too few cycles is
    measured once more with the duration scaled up to reach the minimum.
    """
    configs = enumerate_configs(constraints)
    results = []
    for cfg in configs:
        try:
            m = measure_config(env_factory, cfg, constraints.duration, constraints.warmup)
        except MeasurementTooShort as exc:
            if not extend_short:
                raise
            scale = 1.2 * MIN_CYCLES / max(exc.cycles, 1)
            m = measure_config(env_factory, cfg, constraints.duration * min(math.ceil(scale), 20), 0)
        results.append(m)
    results.sort(key=lambda m: -m.sps)  # stable: ties keep enumeration order
    return TuneReport(results, constraints, machine_descriptor())
