"""Throughput and overhead benchmarks over synthetic and Ocean environments."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, fields
from functools import partial
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from flatpool import ocean
from flatpool.autotune import measure_config
from flatpool.emulation import EmulatedEnv, Env
from flatpool.errors import ConfigInvalid
from flatpool.synthetic import HETEROGENEOUS, SLOW_RESET, ZERO_WORK, SyntheticEnvProfile, make_synthetic_env
from flatpool.vector import VecConfig, select_code_path

CSV_HEADER = (
    "profile", "backend", "workers", "envs_per_worker", "batch", "code_path",
    "sps", "pct_reset", "step_cv", "pct_overhead",
)
PRESETS = {p.name: p for p in (ZERO_WORK, SLOW_RESET, HETEROGENEOUS)}


@dataclass(frozen=True)
class OceanProfile:
    """Benchmark profile backed by an Ocean environment."""

    config: object

    @property
    def name(self) -> str:
        return "ocean_" + ocean.config_name(self.config)

    def to_dict(self) -> dict:
        return {"kind": "ocean", **ocean.config_to_dict(self.config)}


Profile = Union[SyntheticEnvProfile, OceanProfile]


def _ocean_env(cfg, seed: int = 0) -> Env:
    return ocean.make_ocean_env(cfg)


def env_factory(profile: Profile) -> Callable[[int], Env]:
    if isinstance(profile, OceanProfile):
        return partial(_ocean_env, profile.config)
    return partial(make_synthetic_env, profile)


def profile_from_dict(d: dict) -> Profile:
    if d.get("kind", "synthetic") == "ocean":
        return OceanProfile(ocean.config_from_dict(d))
    if d.get("kind", "synthetic") != "synthetic":
        raise ConfigInvalid(f"unknown profile kind {d['kind']!r}")
    return SyntheticEnvProfile.from_dict(d)


def load_profile(source: str | Path) -> Profile:
    """Load a profile from a JSON file, or a built-in preset by name."""
    path = Path(source)
    if not path.exists() and str(source) in PRESETS:
        return PRESETS[str(source)]
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: profile must be a JSON object")
    return profile_from_dict(data)


# -- single-environment timing -------------------------------------------------------------


@dataclass(frozen=True)
class EnvTiming:
    step_mean_s: float
    step_std_s: float
    reset_total_s: float
    total_s: float
    steps: int

    @property
    def pct_reset(self) -> float:
        return 100.0 * self.reset_total_s / self.total_s

    @property
    def step_cv(self) -> float:
        return self.step_std_s / self.step_mean_s if self.step_mean_s > 0 else 0.0


def time_env(env: Env, min_steps: int = 200, min_seconds: float = 0.5, seed: int = 0) -> EnvTiming:
    """Time raw steps and resets of one environment under no-op actions."""
    codec = EmulatedEnv(env).action_codec
    noop = codec.decode(np.zeros(len(codec.nvec), dtype=np.int32))
    clock = time.perf_counter
    step_times: list[float] = []
    reset_total = 0.0
    start = clock()
    t0 = clock()
    observations, _ = env.reset(seed)
    reset_total += clock() - t0
    episode = 0
    while len(step_times) < min_steps or clock() - start < min_seconds:
        t0 = clock()
        observations, _, terms, truncs, _ = env.step({a: noop for a in observations})
        step_times.append(clock() - t0)
        if all(terms.get(a, False) or truncs.get(a, False) for a in terms):
            episode += 1
            t0 = clock()
            observations, _ = env.reset(seed + episode)
            reset_total += clock() - t0
    total = clock() - start
    arr = np.asarray(step_times)
    return EnvTiming(float(arr.mean()), float(arr.std()), reset_total, total, len(arr))


@dataclass(frozen=True)
class Overhead:
    raw_us: float
    wrapped_us: float

    @property
    def overhead_us(self) -> float:
        return self.wrapped_us - self.raw_us

    @property
    def pct(self) -> float:
        return max(0.0, 100.0 * self.overhead_us / self.raw_us) if self.raw_us > 0 else 0.0


def measure_emulation_overhead(profile: Profile = ZERO_WORK, steps: int = 5000, repeats: int = 5) -> Overhead:
    """Per-step cost of the raw env versus the same env behind :class:`EmulatedEnv`.

    Raw and wrapped runs alternate ``repeats`` times; each side keeps its
    fastest run, which filters out scheduler noise.
    """
    make = env_factory(profile)
    raw_env, wrapped = make(0), EmulatedEnv(make(0))
    noop = wrapped.action_codec.decode(np.zeros(len(wrapped.action_spec), dtype=np.int32))
    flat = np.zeros((wrapped.max_agents, len(wrapped.action_spec)), dtype=np.int32)
    clock = time.perf_counter

    def run_raw() -> float:
        observations, _ = raw_env.reset(0)
        agents = list(observations)
        episode = 0
        t0 = clock()
        for _ in range(steps):
            observations, _, terms, truncs, _ = raw_env.step({a: noop for a in agents})
            agents = list(observations)
            if all(terms.get(a, False) or truncs.get(a, False) for a in terms):
                episode += 1
                observations, _ = raw_env.reset(episode)
                agents = list(observations)
        return (clock() - t0) / steps

    def run_wrapped() -> float:
        wrapped.reset(0)
        t0 = clock()
        for _ in range(steps):
            wrapped.step(flat)
        return (clock() - t0) / steps

    run_raw(), run_wrapped()  # warm caches and pass the validation latch
    raw = min(run_raw() for _ in range(repeats))
    wrap_t = min(run_wrapped() for _ in range(repeats))
    return Overhead(raw * 1e6, wrap_t * 1e6)


# -- reports ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    profile: str
    backend: str
    workers: int
    envs_per_worker: int
    batch: int
    code_path: str
    sps: float
    pct_reset: float
    step_cv: float
    pct_overhead: float


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def to_dict(self) -> dict:
        return {"columns": list(CSV_HEADER), "rows": [asdict(r) for r in self.rows]}

    def fastest(self, profile: str) -> BenchRow:
        return max((r for r in self.rows if r.profile == profile), key=lambda r: r.sps)


def run_benchmark(profiles: Sequence[Profile], configs: Sequence[VecConfig], duration: float,
                  warmup: int = 2) -> BenchReport:
    """Measure every profile under every config; rows follow input order."""
    rows = []
    for profile in profiles:
        make = env_factory(profile)
        timing = time_env(make(0), min_seconds=min(duration, 1.0))
        budget = int(0.1 / max(timing.step_mean_s, 1e-7))  # about 0.1s per timed run
        overhead = measure_emulation_overhead(profile, steps=max(50, min(5000, budget)), repeats=3)
        for cfg in configs:
            path = select_code_path(cfg)
            m = measure_config(make, cfg, duration, warmup)
            rows.append(BenchRow(
                profile.name, cfg.backend, cfg.num_workers, cfg.envs_per_worker, cfg.batch,
                path.value, m.sps, timing.pct_reset, timing.step_cv, overhead.pct,
            ))
    return BenchReport(rows)


def write_report(report: BenchReport, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` as CSV and a JSON mirror next to it (``.json`` suffix)."""
    if not report.rows:
        raise ValueError("refusing to write an empty benchmark report")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in report.rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple_row(row)])
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return path, json_path


def astuple_row(row: BenchRow) -> tuple:
    return tuple(getattr(row, f.name) for f in fields(BenchRow))


_CASTS = {f.name: f.type for f in fields(BenchRow)}
_PY = {"str": str, "int": int, "float": float}


def read_report(path: str | Path) -> BenchReport:
    """Parse a CSV written by :func:`write_report`."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = [
            BenchRow(**{name: _PY[_CASTS[name]](value) for name, value in zip(CSV_HEADER, line)})
            for line in reader
        ]
    return BenchReport(rows)
