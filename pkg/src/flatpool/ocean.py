"""Seven tiny sanity environments, each with a scripted optimal policy.

Every environment reports a normalized episode score in ``[0, 1]`` through
:meth:`OceanEnv.episode_score`. A correct pipeline driven by the matching
oracle scores above 0.9; a uniform-random policy scores well below.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from flatpool.emulation import Env
from flatpool.errors import ConfigInvalid, UnknownEnv
from flatpool.spaces import Box, Discrete, MapSpace, Space, sample

SOLVE_BAR = 0.9


class OceanEnv(Env):
    """Base class: subclasses track their own score."""

    name: str = ""

    def episode_score(self) -> float:
        raise NotImplementedError


# -- configs -----------------------------------------------------------------------


@dataclass(frozen=True)
class SquaredConfig:
    grid_size: int = 11
    num_targets: int = 4
    horizon: int | None = None  # default: 2 * grid_size * num_targets

    def validate(self):
        if self.grid_size < 3 or self.grid_size % 2 == 0:
            raise ConfigInvalid("grid_size must be odd and >= 3")
        if not 1 <= self.num_targets <= 4 * (self.grid_size - 1):
            raise ConfigInvalid("num_targets must fit on the perimeter")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigInvalid("horizon must be >= 1")


@dataclass(frozen=True)
class PasswordConfig:
    length: int = 8
    password_seed: int = 0

    def validate(self):
        if self.length < 1:
            raise ConfigInvalid("length must be >= 1")


@dataclass(frozen=True)
class StochasticConfig:
    p: float = 0.7
    horizon: int = 100

    def validate(self):
        if not 0 < self.p < 1:
            raise ConfigInvalid("p must lie in (0, 1)")
        if self.horizon < 1:
            raise ConfigInvalid("horizon must be >= 1")


@dataclass(frozen=True)
class MemoryConfig:
    seq_len: int = 4
    delay: int = 2

    def validate(self):
        if self.seq_len < 1 or self.delay < 0:
            raise ConfigInvalid("seq_len must be >= 1 and delay >= 0")


@dataclass(frozen=True)
class MultiagentConfig:
    horizon: int = 8

    def validate(self):
        if self.horizon < 1:
            raise ConfigInvalid("horizon must be >= 1")


@dataclass(frozen=True)
class SpacesConfig:
    def validate(self):
        pass


@dataclass(frozen=True)
class BanditConfig:
    arm_probs: tuple[float, ...] = (0.1, 0.3, 0.5, 0.95)

    def validate(self):
        if len(self.arm_probs) < 1 or not all(0 <= p <= 1 for p in self.arm_probs):
            raise ConfigInvalid("arm_probs must be probabilities")


# -- environments ------------------------------------------------------------------

MOVES = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]  # action i -> (drow, dcol)


def squared_reward(agent: tuple[int, int], targets: list[tuple[int, int]], hit: list[bool], half_width: int) -> float:
    """``1 - Linf(agent, nearest unhit target) / half_width``; -1 if none left."""
    dists = [max(abs(agent[0] - r), abs(agent[1] - c)) for (r, c), h in zip(targets, hit) if not h]
    if not dists:
        return -1.0
    return 1.0 - min(dists) / half_width


class Squared(OceanEnv):
    """Agent starts at the grid centre; targets sit on the perimeter.

    Observation: ``(g, g)`` float grid, agent 1, unhit target -1. Action:
    one of nine king moves (4 is stay). Landing on an unhit target hits it.
    Score: fraction of targets hit.
    """

    name = "squared"

    def __init__(self, cfg: SquaredConfig = SquaredConfig()):
        cfg.validate()
        self.cfg = cfg
        g = cfg.grid_size
        self.half = g // 2
        self.horizon = cfg.horizon or 2 * g * cfg.num_targets
        self.observation_space = Box((g, g), "float32", -1.0, 1.0)
        self.action_space = Discrete(len(MOVES))
        self.max_agents = 1
        self.perimeter = [(r, c) for r in range(g) for c in range(g) if r in (0, g - 1) or c in (0, g - 1)]
        self._grid = np.zeros((g, g), dtype=np.float32)

    def _obs(self):
        self._grid[:] = 0
        for (r, c), h in zip(self.targets, self.hit):
            if not h:
                self._grid[r, c] = -1.0
        self._grid[self.pos] = 1.0
        return {0: self._grid}

    def reset(self, seed=None):
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self.perimeter), size=self.cfg.num_targets, replace=False)
        self.targets = [self.perimeter[i] for i in sorted(idx)]
        self.hit = [False] * len(self.targets)
        self.pos = (self.half, self.half)
        self.t = 0
        return self._obs(), {}

    def step(self, actions):
        dr, dc = MOVES[int(actions[0])]
        g = self.cfg.grid_size
        self.pos = (min(max(self.pos[0] + dr, 0), g - 1), min(max(self.pos[1] + dc, 0), g - 1))
        reward = squared_reward(self.pos, self.targets, self.hit, self.half)
        for i, target in enumerate(self.targets):
            if target == self.pos and not self.hit[i]:
                self.hit[i] = True
        self.t += 1
        done = all(self.hit)
        trunc = not done and self.t >= self.horizon
        info = {0: {"score": self.episode_score()}} if done or trunc else {}
        return self._obs(), {0: reward}, {0: done}, {0: trunc}, info

    def episode_score(self) -> float:
        return sum(self.hit) / len(self.hit)


class Password(OceanEnv):
    """Emit a fixed bit string, one bit per step.

    The first observation reveals the password (``[1, bits...]``); later
    observations are all zeros. Reward 1 on the last step iff every bit
    matched.
    """

    name = "password"

    def __init__(self, cfg: PasswordConfig = PasswordConfig()):
        cfg.validate()
        self.cfg = cfg
        L = cfg.length
        self.password = np.random.default_rng(cfg.password_seed).integers(0, 2, L)
        self.observation_space = Box((L + 1,), "float32", 0.0, 1.0)
        self.action_space = Discrete(2)
        self.max_agents = 1
        self._obs = np.zeros(L + 1, dtype=np.float32)

    def reset(self, seed=None):
        self.t = 0
        self.correct = 0
        self.last_reward = 0.0
        self._obs[0] = 1.0
        self._obs[1:] = self.password
        return {0: self._obs}, {}

    def step(self, actions):
        self._obs[:] = 0
        self.correct += int(actions[0]) == self.password[self.t]
        self.t += 1
        done = self.t >= self.cfg.length
        self.last_reward = float(done and self.correct == self.cfg.length)
        info = {0: {"score": self.last_reward}} if done else {}
        return {0: self._obs}, {0: self.last_reward}, {0: done}, {0: False}, info

    def episode_score(self) -> float:
        return self.last_reward


class Stochastic(OceanEnv):
    """Terminal reward ``1 - |freq(action 0) - p|`` after ``horizon`` steps.

    Observation: elapsed fraction of the episode.
    """

    name = "stochastic"

    def __init__(self, cfg: StochasticConfig = StochasticConfig()):
        cfg.validate()
        self.cfg = cfg
        self.observation_space = Box((1,), "float32", 0.0, 1.0)
        self.action_space = Discrete(2)
        self.max_agents = 1
        self._obs = np.zeros(1, dtype=np.float32)

    def reset(self, seed=None):
        self.t = 0
        self.zeros = 0
        self.last_reward = 0.0
        self._obs[0] = 0.0
        return {0: self._obs}, {}

    def step(self, actions):
        self.zeros += int(actions[0]) == 0
        self.t += 1
        T = self.cfg.horizon
        self._obs[0] = self.t / T
        done = self.t >= T
        self.last_reward = 1.0 - abs(self.zeros / T - self.cfg.p) if done else 0.0
        info = {0: {"score": self.last_reward}} if done else {}
        return {0: self._obs}, {0: self.last_reward}, {0: done}, {0: False}, info

    def episode_score(self) -> float:
        return self.last_reward


class Memory(OceanEnv):
    """Recall a random bit sequence after a delay.

    Observation ``[digit, presenting]``: the sequence is shown one digit per
    step with ``presenting = 1``, then zeros follow. After ``delay`` zero
    steps the agent must emit the sequence, one digit per step; each correct
    digit earns ``1 / seq_len``.
    """

    name = "memory"

    def __init__(self, cfg: MemoryConfig = MemoryConfig()):
        cfg.validate()
        self.cfg = cfg
        self.observation_space = Box((2,), "float32", 0.0, 1.0)
        self.action_space = Discrete(2)
        self.max_agents = 1
        self._obs = np.zeros(2, dtype=np.float32)

    def _fill(self):
        if self.t < self.cfg.seq_len:
            self._obs[:] = (self.seq[self.t], 1.0)
        else:
            self._obs[:] = 0.0
        return {0: self._obs}

    def reset(self, seed=None):
        self.seq = np.random.default_rng(seed).integers(0, 2, self.cfg.seq_len)
        self.t = 0
        self.correct = 0
        return self._fill(), {}

    def step(self, actions):
        L, D = self.cfg.seq_len, self.cfg.delay
        recall = self.t - L - D
        reward = 0.0
        if 0 <= recall < L and int(actions[0]) == self.seq[recall]:
            self.correct += 1
            reward = 1.0 / L
        self.t += 1
        done = self.t >= 2 * L + D
        info = {0: {"score": self.episode_score()}} if done else {}
        return self._fill(), {0: reward}, {0: done}, {0: False}, info

    def episode_score(self) -> float:
        return self.correct / self.cfg.seq_len


class Multiagent(OceanEnv):
    """Two agents (ids 1 and 2); agent ``i`` is rewarded for action ``i - 1``.

    Each agent observes ``[i - 1]``.
    """

    name = "multiagent"

    def __init__(self, cfg: MultiagentConfig = MultiagentConfig()):
        cfg.validate()
        self.cfg = cfg
        self.observation_space = Box((1,), "float32", 0.0, 1.0)
        self.action_space = Discrete(2)
        self.max_agents = 2
        self.agents = (1, 2)
        self._obs = {i: np.array([i - 1], dtype=np.float32) for i in self.agents}

    def reset(self, seed=None):
        self.t = 0
        self.total = 0.0
        return dict(self._obs), {}

    def step(self, actions):
        rewards = {i: float(int(actions[i]) == i - 1) for i in self.agents}
        self.total += sum(rewards.values())
        self.t += 1
        done = self.t >= self.cfg.horizon
        flags = dict.fromkeys(self.agents, done)
        info = {i: {"score": self.episode_score()} for i in self.agents} if done else {}
        return dict(self._obs), rewards, flags, dict.fromkeys(self.agents, False), info

    def episode_score(self) -> float:
        return self.total / (len(self.agents) * self.cfg.horizon)


def spaces_targets(obs) -> tuple[int, int]:
    """The only rewarded action for a Spaces observation."""
    a = int(np.count_nonzero(np.asarray(obs["image"]) > 0) % 2)
    flat = np.asarray(obs["flat"])
    b = int(flat[0] > flat[1])
    return a, b


class Spaces(OceanEnv):
    """Single-step episode with nested spaces.

    Reward 1 iff ``a`` equals the parity of positive image cells and ``b``
    equals ``flat[0] > flat[1]``.
    """

    name = "spaces"

    def __init__(self, cfg: SpacesConfig = SpacesConfig()):
        self.cfg = cfg
        self.observation_space = MapSpace({
            "image": Box((3, 3), "float32", -1.0, 1.0),
            "flat": Box((2,), "float32", -1.0, 1.0),
        })
        self.action_space = MapSpace({"a": Discrete(2), "b": Discrete(2)})
        self.max_agents = 1

    def reset(self, seed=None):
        self.obs = sample(self.observation_space, seed)
        self.last_reward = 0.0
        return {0: self.obs}, {}

    def step(self, actions):
        act = actions[0]
        self.last_reward = float((int(act["a"]), int(act["b"])) == spaces_targets(self.obs))
        return {0: self.obs}, {0: self.last_reward}, {0: True}, {0: False}, {0: {"score": self.last_reward}}

    def episode_score(self) -> float:
        return self.last_reward


class Bandit(OceanEnv):
    """Single pull of a k-armed Bernoulli bandit."""

    name = "bandit"

    def __init__(self, cfg: BanditConfig = BanditConfig()):
        cfg.validate()
        self.cfg = cfg
        self.observation_space = Box((1,), "float32", 0.0, 0.0)
        self.action_space = Discrete(len(cfg.arm_probs))
        self.max_agents = 1
        self._obs = np.zeros(1, dtype=np.float32)

    def reset(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.last_reward = 0.0
        return {0: self._obs}, {}

    def step(self, actions):
        arm = int(actions[0])
        self.last_reward = float(self.rng.random() < self.cfg.arm_probs[arm])
        return {0: self._obs}, {0: self.last_reward}, {0: True}, {0: False}, {0: {"score": self.last_reward}}

    def episode_score(self) -> float:
        return self.last_reward


# -- policies -----------------------------------------------------------------------


class Policy:
    """Maps per-agent observations to per-agent actions; may keep history."""

    def reset(self, seed: int | None = None) -> None:
        pass

    def __call__(self, observations: dict) -> dict:
        raise NotImplementedError


class RandomPolicy(Policy):
    def __init__(self, action_space: Space, seed: int | None = None):
        self.action_space = action_space
        self.rng = np.random.default_rng(seed)

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng([seed, 7])

    def __call__(self, observations):
        return {a: sample(self.action_space, self.rng) for a in observations}


class SquaredOracle(Policy):
    """Greedy king moves toward the nearest unhit target."""

    def __call__(self, observations):
        grid = np.asarray(observations[0])
        (r0, c0), = np.argwhere(grid == 1.0)
        targets = np.argwhere(grid == -1.0)
        if len(targets) == 0:
            return {0: 4}
        d = np.maximum(np.abs(targets[:, 0] - r0), np.abs(targets[:, 1] - c0))
        r, c = targets[int(np.argmin(d))]
        return {0: MOVES.index((int(np.sign(r - r0)), int(np.sign(c - c0))))}


class PasswordOracle(Policy):
    def reset(self, seed=None):
        self.bits: list[int] = []
        self.t = 0

    def __call__(self, observations):
        obs = np.asarray(observations[0])
        if obs[0] == 1.0:
            self.bits = [int(b) for b in obs[1:]]
            self.t = 0
        action = self.bits[self.t] if self.t < len(self.bits) else 0
        self.t += 1
        return {0: action}


class StochasticOracle(Policy):
    def __init__(self, cfg: StochasticConfig = StochasticConfig()):
        self.zeros = round(cfg.p * cfg.horizon)
        self.t = 0

    def reset(self, seed=None):
        self.t = 0

    def __call__(self, observations):
        action = 0 if self.t < self.zeros else 1
        self.t += 1
        return {0: action}


class MemoryOracle(Policy):
    def __init__(self, cfg: MemoryConfig = MemoryConfig()):
        self.delay = cfg.delay
        self.reset()

    def reset(self, seed=None):
        self.seq: list[int] = []
        self.zero_steps = 0

    def __call__(self, observations):
        digit, presenting = np.asarray(observations[0])
        if presenting == 1.0:
            self.seq.append(int(digit))
            return {0: 0}
        recall = self.zero_steps - self.delay
        self.zero_steps += 1
        return {0: self.seq[recall] if 0 <= recall < len(self.seq) else 0}


class MultiagentOracle(Policy):
    def __call__(self, observations):
        return {a: int(np.asarray(obs)[0]) for a, obs in observations.items()}


class SpacesOracle(Policy):
    def __call__(self, observations):
        a, b = spaces_targets(observations[0])
        return {0: {"a": a, "b": b}}


class BanditOracle(Policy):
    def __init__(self, cfg: BanditConfig = BanditConfig()):
        self.arm = int(np.argmax(cfg.arm_probs))

    def __call__(self, observations):
        return {0: self.arm}


@dataclass(frozen=True)
class _Entry:
    config: type
    env: type
    oracle: Callable = field(repr=False)


REGISTRY: dict[str, _Entry] = {
    "squared": _Entry(SquaredConfig, Squared, lambda cfg: SquaredOracle()),
    "password": _Entry(PasswordConfig, Password, lambda cfg: PasswordOracle()),
    "stochastic": _Entry(StochasticConfig, Stochastic, StochasticOracle),
    "memory": _Entry(MemoryConfig, Memory, MemoryOracle),
    "multiagent": _Entry(MultiagentConfig, Multiagent, lambda cfg: MultiagentOracle()),
    "spaces": _Entry(SpacesConfig, Spaces, lambda cfg: SpacesOracle()),
    "bandit": _Entry(BanditConfig, Bandit, BanditOracle),
}
ENV_NAMES = tuple(REGISTRY)


def _entry(name: str) -> _Entry:
    try:
        return REGISTRY[name.lower()]
    except KeyError:
        raise UnknownEnv(f"unknown Ocean env {name!r}; choose from {', '.join(ENV_NAMES)}") from None


def make_config(name: str, **params):
    entry = _entry(name)
    try:
        if "arm_probs" in params:
            params["arm_probs"] = tuple(params["arm_probs"])
        cfg = entry.config(**params)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from None
    cfg.validate()
    return cfg


def config_name(cfg) -> str:
    for name, entry in REGISTRY.items():
        if isinstance(cfg, entry.config):
            return name
    raise UnknownEnv(f"not an Ocean config: {cfg!r}")


def make_ocean_env(cfg_or_name, **params) -> OceanEnv:
    """Build an env from a config object, or from a name plus parameters."""
    cfg = make_config(cfg_or_name, **params) if isinstance(cfg_or_name, str) else cfg_or_name
    return _entry(config_name(cfg)).env(cfg)


def oracle_policy(name: str, cfg=None) -> Policy:
    entry = _entry(name)
    return entry.oracle(cfg if cfg is not None else entry.config())


def random_policy(env: Env, seed: int | None = None) -> Policy:
    return RandomPolicy(env.action_space, seed)


def config_to_dict(cfg) -> dict:
    d = {"env": config_name(cfg)}
    d.update({k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()})
    return d


def config_from_dict(d: dict):
    d = dict(d)
    d.pop("kind", None)
    name = d.pop("env", None)
    if name is None:
        raise ConfigInvalid("Ocean config needs an 'env' field")
    return make_config(name, **d)


def run_episode(env: OceanEnv, policy: Policy, seed: int | None) -> float:
    observations, _ = env.reset(seed)
    policy.reset(seed)
    while True:
        observations, _, terminals, truncations, _ = env.step(policy(observations))
        if all(terminals.get(a, False) or truncations.get(a, False) for a in terminals):
            return env.episode_score()


def evaluate_score(env: OceanEnv, policy: Policy, episodes: int, seed: int = 0) -> float:
    """Mean normalized score over ``episodes`` episodes seeded ``seed, seed+1, ...``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    total = 0.0
    for i in range(episodes):
        total += run_episode(env, policy, seed + i)
    return total / episodes
