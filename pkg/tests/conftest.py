from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flatpool.emulation import Env
from flatpool.spaces import Box, Discrete, MapSpace, MultiDiscrete, TupleSpace, sample
from flatpool.vector import live_segments

BOX_DTYPES = ("float32", "float64", "int8", "uint8", "int16", "int32", "int64")
KEY_ALPHABET = st.characters(min_codepoint=32, max_codepoint=0x2FF)


@st.composite
def box_shapes(draw, max_elements=64):
    ndim = draw(st.integers(0, 3))
    dims = []
    budget = max_elements
    for _ in range(ndim):
        d = draw(st.integers(0, min(budget, 6)))
        dims.append(d)
        budget = budget // max(d, 1)
    return tuple(dims)


def leaf_spaces(discrete_only=False):
    discrete = st.integers(1, 20).map(Discrete)
    multi = st.lists(st.integers(1, 10), min_size=1, max_size=4).map(MultiDiscrete)
    if discrete_only:
        return st.one_of(discrete, multi)
    box = st.builds(Box, box_shapes(), st.sampled_from(BOX_DTYPES))
    return st.one_of(discrete, multi, box)


def spaces(depth=3, discrete_only=False):
    """Space trees of at most ``depth`` levels with at most 8 children per node."""
    leaf = leaf_spaces(discrete_only)
    if depth <= 1:
        return leaf
    child = spaces(depth - 1, discrete_only)
    tuples = st.lists(child, min_size=1, max_size=8).map(lambda cs: TupleSpace(*cs))
    maps = st.dictionaries(st.text(KEY_ALPHABET, min_size=1, max_size=6), child, min_size=1, max_size=8).map(MapSpace)
    return st.one_of(leaf, tuples, maps)


def values(space):
    """Strategy drawing arbitrary conforming values, including NaN/inf/-0.0 floats."""
    if isinstance(space, Discrete):
        return st.integers(0, space.n - 1)
    if isinstance(space, MultiDiscrete):
        return st.tuples(*(st.integers(0, n - 1) for n in space.nvec)).map(lambda t: np.array(t, dtype=np.int64))
    if isinstance(space, Box):
        dtype = np.dtype(space.dtype)
        if dtype.kind == "f":
            elements = st.floats(width=dtype.itemsize * 8, allow_nan=True, allow_infinity=True)
        else:
            info = np.iinfo(dtype)
            elements = st.integers(int(info.min), int(info.max))
        return hnp.arrays(dtype, space.shape, elements=elements)
    if isinstance(space, TupleSpace):
        return st.tuples(*(values(c) for c in space.children))
    return st.fixed_dictionaries({k: values(c) for k, c in space.children})


# -- mock environments ---------------------------------------------------------------


class MockMultiAgentEnv(Env):
    """Randomized population of agents with shuffled dict iteration order.

    The population and observations depend only on ``seed``;
    ``order_seed`` only permutes dict insertion order.
    """

    def __init__(self, observation_space, action_space=Discrete(3), max_agents=4, episode_length=5,
                 seed=0, order_seed=0, ids=None):
        self.observation_space = observation_space
        self.action_space = action_space
        self.max_agents = max_agents
        self.episode_length = episode_length
        self.ids = list(ids) if ids is not None else [f"agent_{i}" for i in range(max_agents)]
        self.seed = seed
        self._order = np.random.default_rng(order_seed)
        self.log: list = []

    def _emit(self, rng):
        k = int(rng.integers(1, self.max_agents + 1))
        chosen = sorted(rng.choice(len(self.ids), size=k, replace=False).tolist())
        present = [self.ids[i] for i in chosen]
        obs = {a: sample(self.observation_space, rng) for a in present}
        keys = list(obs)
        self._order.shuffle(keys)
        return {a: obs[a] for a in keys}

    def reset(self, seed=None):
        self.rng = np.random.default_rng([self.seed if seed is None else seed, 11])
        self.t = 0
        self.obs = self._emit(self.rng)
        return self.obs, {}

    def step(self, actions):
        self.log.append(dict(actions))
        self.t += 1
        done = self.t >= self.episode_length
        self.obs = self._emit(self.rng)
        rewards = {a: float(self.rng.integers(-5, 6)) for a in sorted(self.obs)}
        terminals = dict.fromkeys(self.obs, done)
        truncations = dict.fromkeys(self.obs, False)
        infos = {a: {"t": float(self.t)} for a in self.obs} if self.t % 2 == 0 else {}
        return self.obs, rewards, terminals, truncations, infos


class FlatEnv(Env):
    """Single-agent Box([4], float32) env; obs are seeded random floats."""

    observation_space = Box((4,), "float32")
    action_space = Discrete(2)
    max_agents = 1

    def __init__(self, episode_length=3):
        self.episode_length = episode_length

    def reset(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.obs = self.rng.standard_normal(4).astype(np.float32)
        return {0: self.obs}, {}

    def step(self, actions):
        self.t += 1
        self.obs = self.rng.standard_normal(4).astype(np.float32)
        done = self.t >= self.episode_length
        return {0: self.obs}, {0: float(actions[0])}, {0: done}, {0: False}, {}


class DelayEnv(Env):
    """Counter-stamped env whose step sleeps a fixed, seed-selected delay.

    Sleeping (not spinning) keeps the delay schedule exact on a machine
    with fewer cores than workers.
    """

    observation_space = Box((8,), "uint8")
    action_space = Discrete(2)
    max_agents = 1

    def __init__(self, delay_s):
        self.delay_s = delay_s
        self.counter = 0

    def _obs(self):
        return {0: np.array([self.counter], dtype="<u8").view(np.uint8)}

    def reset(self, seed=None):
        return self._obs(), {}

    def step(self, actions):
        time.sleep(self.delay_s)
        self.counter += 1
        return self._obs(), {0: 0.0}, {0: False}, {0: False}, {}


@pytest.fixture
def no_leaks():
    before = live_segments()
    yield
    assert live_segments() - before == set()


# -- vectorization drivers -------------------------------------------------------------


def scheduled_actions(slot_ids, appearances, shape, n_actions):
    """Deterministic per-slot action schedule: depends only on (slot, appearance)."""
    acts = np.empty(shape, dtype=np.int32)
    for i, k in enumerate(slot_ids):
        acts[i] = (7 * int(k) + 3 * appearances[int(k)]) % n_actions
    return acts


def drive(vec, recvs, seed=0, n_actions=2):
    """Run ``recvs`` recv/send cycles; return per-slot (obs, reward, terminal) byte records."""
    from collections import defaultdict

    vec.async_reset(seed)
    traj = defaultdict(list)
    appearances = defaultdict(int)
    for _ in range(recvs):
        b = vec.recv()
        for i, k in enumerate(b.env_slot_ids):
            traj[int(k)].append((b.observations[i].tobytes(), b.rewards[i].tobytes(), b.terminals[i].tobytes()))
        acts = scheduled_actions(b.env_slot_ids, appearances, vec.action_shape(len(b.env_slot_ids)), n_actions)
        for k in b.env_slot_ids:
            appearances[int(k)] += 1
        vec.send(b.env_slot_ids, acts)
    return dict(traj)


def reference_trajectory(factory, cfg, slot, length, seed=0, n_actions=2):
    """Per-slot oracle: one EmulatedEnv stepped in a plain loop, no pool."""
    from flatpool.emulation import EmulatedEnv

    emu = EmulatedEnv(factory(cfg.seed_base + slot), seed_stride=cfg.num_envs)
    res = emu.reset(seed + slot)
    out = [(res.obs_block.tobytes(), res.rewards.tobytes(), res.terminals.tobytes())]
    appearances = {slot: 0}
    while len(out) < length:
        acts = scheduled_actions([slot], appearances, (1, emu.max_agents, len(emu.action_spec)), n_actions)[0]
        appearances[slot] += 1
        res = emu.step(acts)
        out.append((res.obs_block.tobytes(), res.rewards.tobytes(), res.terminals.tobytes()))
    return out
