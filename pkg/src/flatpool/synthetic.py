"""Synthetic environments with controlled step and reset cost.

Simulated work is a busy loop on the thread's CPU clock, so a synthetic
step burns CPU the way a real simulator does instead of yielding the core.
Observations carry a little-endian step counter in their first bytes, which
lets tests verify that every slot advances exactly once per appearance.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from flatpool.emulation import Env
from flatpool.errors import ConfigInvalid
from flatpool.spaces import Box, Discrete

COUNTER_BYTES = 8


def spin(seconds: float) -> None:
    """Burn ``seconds`` of this thread's CPU time."""
    if seconds <= 0:
        return
    clock = time.thread_time
    end = clock() + seconds
    while clock() < end:
        pass


@dataclass(frozen=True)
class SyntheticEnvProfile:
    name: str = "synthetic"
    obs_bytes: int = 16
    n_actions: int = 2
    step_time_us: float = 0.0
    step_std_us: float = 0.0
    reset_time_us: float = 0.0
    episode_length: int = 64
    max_agents: int = 1

    def __post_init__(self):
        if self.obs_bytes < 1 or self.n_actions < 1 or self.max_agents < 1:
            raise ConfigInvalid("obs_bytes, n_actions and max_agents must be >= 1")
        if self.step_time_us < 0 or self.step_std_us < 0 or self.reset_time_us < 0:
            raise ConfigInvalid("step/reset times must be >= 0")
        if self.episode_length < 1:
            raise ConfigInvalid("episode_length must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticEnvProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"kind"}
        if unknown:
            raise ConfigInvalid(f"unknown profile fields {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in d.items() if k in known})
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None


ZERO_WORK = SyntheticEnvProfile(name="zero_work")
SLOW_RESET = SyntheticEnvProfile(
    name="slow_reset", step_time_us=1000.0, reset_time_us=20_000.0, episode_length=64,
)
HETEROGENEOUS = SyntheticEnvProfile(
    name="heterogeneous", step_time_us=1000.0, step_std_us=1000.0, reset_time_us=20_000.0, episode_length=64,
)


class SyntheticEnv(Env):
    """Counter-stamped environment whose cost follows a profile.

    Byte layout of each agent's observation: step counter (up to 8 bytes,
    little-endian), then the agent's last action, then the agent index,
    then seed-derived filler.
    """

    def __init__(self, profile: SyntheticEnvProfile, seed: int = 0):
        self.profile = profile
        self.observation_space = Box((profile.obs_bytes,), "uint8")
        self.action_space = Discrete(profile.n_actions)
        self.max_agents = profile.max_agents
        self.agents = list(range(profile.max_agents))
        self.counter = 0
        self.t = 0
        self._timing = np.random.default_rng([seed, 1])
        self._obs = {a: np.zeros(profile.obs_bytes, dtype=np.uint8) for a in self.agents}
        self._stamp_len = min(COUNTER_BYTES, profile.obs_bytes)

    def _stamp(self) -> None:
        stamp = np.array([self.counter], dtype="<u8").view(np.uint8)[:self._stamp_len]
        for obs in self._obs.values():
            obs[:self._stamp_len] = stamp

    def reset(self, seed=None):
        p = self.profile
        spin(p.reset_time_us * 1e-6)
        filler = np.random.default_rng([0 if seed is None else seed, 2]).integers(0, 256, p.obs_bytes, dtype=np.uint8)
        for i, obs in self._obs.items():
            obs[:] = filler
            if p.obs_bytes > COUNTER_BYTES:
                obs[COUNTER_BYTES] = 0
            if p.obs_bytes > COUNTER_BYTES + 1:
                obs[COUNTER_BYTES + 1] = i
        self.t = 0
        self._stamp()
        return self._obs, {}

    def step(self, actions):
        p = self.profile
        if p.step_time_us > 0:
            dt = self._timing.normal(p.step_time_us, p.step_std_us) if p.step_std_us > 0 else p.step_time_us
            spin(max(0.0, dt) * 1e-6)
        self.counter += 1
        self.t += 1
        self._stamp()
        rewards = {}
        for a in self.agents:
            act = int(actions.get(a, 0))
            if p.obs_bytes > COUNTER_BYTES:
                self._obs[a][COUNTER_BYTES] = act % 256
            rewards[a] = 0.5 * act + 0.25 * (self.t % 3)
        done = self.t >= p.episode_length
        terminals = dict.fromkeys(self.agents, done)
        truncations = dict.fromkeys(self.agents, False)
        infos = {a: {"steps": float(self.t)} for a in self.agents} if done else {}
        return self._obs, rewards, terminals, truncations, infos


def make_synthetic_env(profile: SyntheticEnvProfile, seed: int = 0) -> SyntheticEnv:
    return SyntheticEnv(profile, seed)


def read_counter(obs_row: np.ndarray) -> int:
    """Decode the step counter from one agent's observation bytes."""
    raw = np.asarray(obs_row, dtype=np.uint8).reshape(-1)[:COUNTER_BYTES]
    padded = np.zeros(COUNTER_BYTES, dtype=np.uint8)
    padded[:raw.size] = raw
    return int(padded.view("<u8")[0])
