"""Byte layout of the shared region used by the vectorized backends.

All per-slot regions are indexed by environment slot first, so the slots of
any run of consecutive workers occupy one contiguous byte range. Region
starts are rounded up to ``REGION_ALIGN`` bytes; records inside a region are
packed. Offsets depend only on ``(M, A, B, K, W)``:

==============  =======  ================
region          dtype    shape
==============  =======  ================
observations    uint8    (M, A, B)
actions         <i4      (M, A, K)
rewards         <f4      (M, A)
terminals       uint8    (M, A)
truncations     uint8    (M, A)
masks           uint8    (M, A)
flags           <i4      (W,)
heartbeats      <i8      (W,)
info_counts     <i4      (W,)
seeds           <i8      (W,)
shutdown        <i4      (1,)
==============  =======  ================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGION_ALIGN = 64

# worker flag values
IDLE = 0
ACTIONS_READY = 1
STEPPING = 2
OBS_READY = 3
RESET_REQUESTED = 4
FAILED = 5
STARTING = 6

FLAG_NAMES = {
    IDLE: "IDLE",
    ACTIONS_READY: "ACTIONS_READY",
    STEPPING: "STEPPING",
    OBS_READY: "OBS_READY",
    RESET_REQUESTED: "RESET_REQUESTED",
    FAILED: "FAILED",
    STARTING: "STARTING",
}

PER_SLOT = ("observations", "actions", "rewards", "terminals", "truncations", "masks")


def _align(n: int) -> int:
    return (n + REGION_ALIGN - 1) // REGION_ALIGN * REGION_ALIGN


@dataclass(frozen=True)
class Region:
    name: str
    offset: int
    dtype: str
    shape: tuple

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * np.dtype(self.dtype).itemsize


@dataclass(frozen=True)
class SharedLayout:
    num_envs: int
    max_agents: int
    obs_bytes: int
    num_actions: int
    num_workers: int

    @property
    def regions(self) -> tuple[Region, ...]:
        M, A, B, K, W = self.num_envs, self.max_agents, self.obs_bytes, self.num_actions, self.num_workers
        spec = [
            ("observations", "|u1", (M, A, B)),
            ("actions", "<i4", (M, A, K)),
            ("rewards", "<f4", (M, A)),
            ("terminals", "|u1", (M, A)),
            ("truncations", "|u1", (M, A)),
            ("masks", "|u1", (M, A)),
            ("flags", "<i4", (W,)),
            ("heartbeats", "<i8", (W,)),
            ("info_counts", "<i4", (W,)),
            ("seeds", "<i8", (W,)),
            ("shutdown", "<i4", (1,)),
        ]
        out, offset = [], 0
        for name, dtype, shape in spec:
            region = Region(name, offset, dtype, shape)
            out.append(region)
            offset = _align(offset + region.nbytes)
        return tuple(out)

    @property
    def total_bytes(self) -> int:
        last = self.regions[-1]
        return max(_align(last.offset + last.nbytes), REGION_ALIGN)

    def views(self, buf) -> dict[str, np.ndarray]:
        return {
            r.name: np.ndarray(r.shape, dtype=np.dtype(r.dtype), buffer=buf, offset=r.offset)
            for r in self.regions
        }

    def describe(self) -> dict:
        """JSON-friendly description for external inspection tools."""
        return {
            "total_bytes": self.total_bytes,
            "regions": [
                {"name": r.name, "offset": r.offset, "nbytes": r.nbytes, "dtype": r.dtype, "shape": list(r.shape)}
                for r in self.regions
            ],
            "flag_values": {v: k for k, v in FLAG_NAMES.items()},
        }
