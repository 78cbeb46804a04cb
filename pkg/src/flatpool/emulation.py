"""Make structured, multi-agent environments look flat and fixed-size.

An :class:`EmulatedEnv` wraps any object following the :class:`Env`
contract and emits, for every reset/step, one ``(max_agents, record_bytes)``
observation block plus reward/terminal/truncation/mask rows. Live agents
occupy the leading rows in ascending agent-id order; the remaining rows are
zero padding. Actions come back as a ``(max_agents, len(nvec))`` integer
matrix.

The output arrays can be supplied by the caller (``buffers=``) so that a
vectorization worker writes straight into shared memory.
"""

from __future__ import annotations

import logging
import numbers
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from flatpool.errors import ActionOutOfRange, ShapeCheckFailed, ShapeMismatch
from flatpool.spaces import (
    ActionCodec,
    Discrete,
    FlatLayout,
    MultiDiscreteSpec,
    Space,
    check_value,
    infer_layout,
)

log = logging.getLogger(__name__)


class Env:
    """Native environment contract.

    Subclasses set ``observation_space``, ``action_space`` and ``max_agents``
    and implement :meth:`reset` and :meth:`step`. All per-agent data is keyed
    by agent id; ids must be mutually orderable. Infos map agent id to a
    ``{key: float}`` dict.
    """

    observation_space: Space
    action_space: Space
    max_agents: int = 1

    def reset(self, seed: int | None = None) -> tuple[dict, dict]:
        raise NotImplementedError

    def step(self, actions: dict) -> tuple[dict, dict, dict, dict, dict]:
        raise NotImplementedError

    def close(self) -> None:
        pass


@dataclass
class StepResult:
    obs_block: np.ndarray  # (max_agents, record_bytes) uint8
    rewards: np.ndarray  # (max_agents,) float32
    terminals: np.ndarray  # (max_agents,) bool
    truncations: np.ndarray  # (max_agents,) bool
    mask: np.ndarray  # (max_agents,) bool
    infos: list[dict] = field(default_factory=list)
    agent_ids: list = field(default_factory=list)


class EpisodeAggregator:
    """Collapse per-step info dicts into one record per episode.

    Numeric values are averaged over every occurrence within the episode;
    ``episode_length`` and ``episode_return`` are always present. Empty dicts
    contribute nothing. Non-numeric values are dropped and counted in
    :attr:`dropped`.
    """

    def __init__(self):
        self.dropped = 0
        self.reset()

    def reset(self) -> None:
        self._sums: dict[str, float] = {}
        self._counts: dict[str, int] = {}
        self.length = 0
        self.ret = 0.0

    def update(self, infos: Iterable[Mapping], reward: float, done: bool) -> dict | None:
        self.length += 1
        self.ret += float(reward)
        for info in infos:
            for key, value in info.items():
                if isinstance(value, numbers.Real) and not isinstance(value, bool):
                    self._sums[key] = self._sums.get(key, 0.0) + float(value)
                    self._counts[key] = self._counts.get(key, 0) + 1
                else:
                    self.dropped += 1
                    log.warning("dropping non-numeric info %r=%r (%d dropped so far)", key, value, self.dropped)
        if not done:
            return None
        record = {key: self._sums[key] / self._counts[key] for key in self._sums}
        record["episode_length"] = self.length
        record["episode_return"] = self.ret
        self.reset()
        return record


def aggregate_infos(stream: Iterable[tuple[Mapping, float, bool]]) -> Iterator[dict]:
    """Yield one aggregate per finished episode from ``(info, reward, done)``
    triples."""
    agg = EpisodeAggregator()
    for info, reward, done in stream:
        record = agg.update([info] if info else [], reward, done)
        if record is not None:
            yield record


def _split_infos(infos) -> list[Mapping]:
    if not infos:
        return []
    values = list(infos.values())
    if all(isinstance(v, Mapping) for v in values):
        return [v for v in values if v]
    return [infos]


class EmulatedEnv:
    """Flat, fixed-size, canonically ordered view of an :class:`Env`.

    ``seed_stride`` spaces out the seeds used for automatic resets: episode
    ``i`` after ``reset(seed)`` starts from ``seed + i * seed_stride``.
    """

    def __init__(self, env: Env, buffers: Mapping[str, np.ndarray] | None = None, seed_stride: int = 1):
        self.env = env
        self.observation_space = env.observation_space
        self.action_space = env.action_space
        self.obs_layout: FlatLayout = infer_layout(env.observation_space)
        self.action_codec = ActionCodec(env.action_space)
        self.action_spec: MultiDiscreteSpec = self.action_codec.spec
        self.max_agents = int(env.max_agents)
        if self.max_agents < 1:
            raise ValueError("max_agents must be >= 1")
        self.seed_stride = seed_stride
        self.checked = False

        A, B = self.max_agents, self.obs_layout.total_bytes
        if buffers is None:
            buffers = {
                "observations": np.zeros((A, B), dtype=np.uint8),
                "rewards": np.zeros(A, dtype=np.float32),
                "terminals": np.zeros(A, dtype=np.bool_),
                "truncations": np.zeros(A, dtype=np.bool_),
                "masks": np.zeros(A, dtype=np.bool_),
            }
        self.obs_block = buffers["observations"].reshape(A, B)
        self.rewards = buffers["rewards"].reshape(A)
        self.terminals = buffers["terminals"].reshape(A).view(np.bool_)
        self.truncations = buffers["truncations"].reshape(A).view(np.bool_)
        self.mask = buffers["masks"].reshape(A).view(np.bool_)

        self._rows = [self._row_writers(self.obs_block[r]) for r in range(A)]
        self._row_agents: list = []
        self._n_written = A  # rows possibly holding stale data
        self._seed: int | None = None
        self._episode = 0
        self.aggregator = EpisodeAggregator()

    def _row_writers(self, row: np.ndarray):
        writers = []
        for leaf in self.obs_layout.leaves:
            if leaf.byte_length == 0:
                continue
            view = row[leaf.byte_offset:leaf.byte_offset + leaf.byte_length].view(leaf.wire_dtype)
            if not isinstance(leaf.space, Discrete):
                view = view.reshape(leaf.shape)
            writers.append((leaf.path, view, isinstance(leaf.space, Discrete)))
        return writers

    # -- observation placement ------------------------------------------------

    def _validate(self, observations: Mapping) -> None:
        for agent in sorted(observations):
            try:
                check_value(observations[agent], self.observation_space)
            except ShapeMismatch as exc:
                raise ShapeCheckFailed(agent, exc.path, str(exc)) from None

    def _write_obs(self, observations: Mapping, validate: bool) -> list:
        agents = sorted(observations)
        n = len(agents)
        if n > self.max_agents:
            raise ShapeCheckFailed(agents[self.max_agents], (), f"{n} agents exceed max_agents={self.max_agents}")
        if validate:
            self._validate(observations)
        if self._n_written > n:
            self.obs_block[n:self._n_written] = 0
        for r, agent in enumerate(agents):
            value = observations[agent]
            for path, view, scalar in self._rows[r]:
                v = value
                for k in path:
                    v = v[k]
                if scalar:
                    view[0] = v
                else:
                    view[...] = v
        self._n_written = n
        return agents

    def _result(self, infos: list[dict]) -> StepResult:
        return StepResult(
            self.obs_block, self.rewards, self.terminals, self.truncations, self.mask,
            infos, self._row_agents,
        )

    # -- contract -------------------------------------------------------------

    def reset(self, seed: int | None = None) -> StepResult:
        """Reset the inner env; always validates every observation."""
        self._seed = seed
        self._episode = 0
        self.aggregator.reset()
        observations, _ = self.env.reset(seed)
        agents = self._write_obs(observations, validate=True)
        self.rewards.fill(0)
        self.terminals.fill(False)
        self.truncations.fill(False)
        self.mask.fill(False)
        self.mask[:len(agents)] = True
        self._row_agents = agents
        return self._result([])

    def _next_seed(self) -> int | None:
        self._episode += 1
        if self._seed is None:
            return None
        return self._seed + self._episode * self.seed_stride

    def step(self, flat_actions) -> StepResult:
        """Decode one action row per live agent, step, and re-emit.

        When every live agent is done the inner env is reset in place: the
        returned observation rows hold the next episode's first observation
        while rewards/terminals/truncations describe the finished step.
        """
        acts = np.asarray(flat_actions)
        agents_in = self._row_agents
        n_in = len(agents_in)
        nvec = self.action_codec.nvec
        if acts.ndim == 1 and self.max_agents == 1:
            acts = acts.reshape(1, -1)
        live = acts[:n_in]
        if live.shape != (n_in, len(nvec)):
            raise ActionOutOfRange(f"expected action rows of length {len(nvec)}, got array {acts.shape}")
        if n_in and ((live < 0) | (live >= nvec)).any():
            bad = np.argwhere((live < 0) | (live >= nvec))[0]
            raise ActionOutOfRange(
                f"action component {int(live[bad[0], bad[1]])} at row {bad[0]}, position {bad[1]} "
                f"outside [0, {int(nvec[bad[1]])})"
            )
        decode = self.action_codec.decode
        actions = {agent: decode(live[r], check=False) for r, agent in enumerate(agents_in)}

        observations, rewards, terminals, truncations, infos = self.env.step(actions)
        validate = not self.checked
        agents = self._write_obs(observations, validate)

        self.rewards.fill(0)
        self.terminals.fill(False)
        self.truncations.fill(False)
        step_return = 0.0
        all_done = True
        for r, agent in enumerate(agents):
            rew = float(rewards.get(agent, 0.0))
            term = bool(terminals.get(agent, False))
            trunc = bool(truncations.get(agent, False))
            self.rewards[r] = rew
            self.terminals[r] = term
            self.truncations[r] = trunc
            step_return += rew
            all_done = all_done and (term or trunc)

        record = self.aggregator.update(_split_infos(infos), step_return, all_done)
        n_end = len(agents)
        if all_done:
            observations, _ = self.env.reset(self._next_seed())
            agents = self._write_obs(observations, validate)
        # rows that just finished keep their mask so the done signal is not read as padding
        self.mask.fill(False)
        self.mask[:max(n_end, len(agents))] = True
        self._row_agents = agents
        self.checked = True
        return self._result([record] if record is not None else [])

    def close(self) -> None:
        self.env.close()


def wrap(env: Env, **kwargs) -> EmulatedEnv:
    return EmulatedEnv(env, **kwargs)


__all__ = [
    "Env",
    "EmulatedEnv",
    "EpisodeAggregator",
    "StepResult",
    "aggregate_infos",
    "wrap",
]

