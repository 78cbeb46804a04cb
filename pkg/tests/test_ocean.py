from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatpool.emulation import wrap
from flatpool.errors import ConfigInvalid, UnknownEnv
from flatpool.ocean import (
    ENV_NAMES,
    BanditConfig,
    MemoryConfig,
    Multiagent,
    Password,
    PasswordConfig,
    Policy,
    RandomPolicy,
    Spaces,
    SquaredConfig,
    StochasticConfig,
    config_from_dict,
    config_to_dict,
    evaluate_score,
    make_config,
    make_ocean_env,
    oracle_policy,
    random_policy,
    spaces_targets,
    squared_reward,
)
from flatpool.spaces import conforms

# Upper bounds on the uniform-random policy's 100-episode mean score.
# Derived offline by Monte-Carlo (20 x 100-episode runs per env; mean + ~5 sd):
#   squared 0.215 +- 0.023, password 0.004 (exact 1/256), stochastic 0.800 +- 0.005,
#   memory 0.50 +- 0.026, multiagent 0.50 +- 0.012, spaces 0.25 +- 0.029, bandit 0.4625 +- 0.055
RANDOM_THRESHOLDS = {
    "squared": 0.35,
    "password": 0.06,
    "stochastic": 0.83,
    "memory": 0.68,
    "multiagent": 0.58,
    "spaces": 0.42,
    "bandit": 0.70,
}


class TestContract:
    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_wraps_and_passes_shape_checks(self, name):
        env = make_ocean_env(name)
        w = wrap(env)
        res = w.reset(0)
        assert res.mask.sum() >= 1
        rng = np.random.default_rng(0)
        for _ in range(50):
            acts = rng.integers(0, w.action_codec.nvec, size=(w.max_agents, len(w.action_spec)))
            w.step(acts)
        assert w.checked

    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_observations_conform(self, name):
        env = make_ocean_env(name)
        obs, _ = env.reset(3)
        policy = random_policy(env, 3)
        for _ in range(30):
            assert len(obs) <= env.max_agents
            assert all(conforms(o, env.observation_space) for o in obs.values())
            obs, rew, term, trunc, _ = env.step(policy(obs))
            if all(term[a] or trunc[a] for a in term):
                obs, _ = env.reset(4)

    def test_max_agents(self):
        assert {name: make_ocean_env(name).max_agents for name in ENV_NAMES} == {
            **dict.fromkeys(ENV_NAMES, 1), "multiagent": 2,
        }


class TestConfig:
    @pytest.mark.parametrize("name, params", [
        ("squared", dict(grid_size=10)),
        ("squared", dict(grid_size=1)),
        ("squared", dict(num_targets=0)),
        ("password", dict(length=0)),
        ("stochastic", dict(p=1.0)),
        ("stochastic", dict(horizon=0)),
        ("memory", dict(seq_len=0)),
        ("bandit", dict(arm_probs=[0.5, 1.5])),
        ("bandit", dict(arm_probs=[])),
        ("spaces", dict(bogus=1)),
    ])
    def test_invalid(self, name, params):
        with pytest.raises(ConfigInvalid):
            make_config(name, **params)

    def test_unknown_env(self):
        with pytest.raises(UnknownEnv):
            make_ocean_env("nethack")
        with pytest.raises(UnknownEnv):
            oracle_policy("nethack")

    @pytest.mark.parametrize("cfg", [
        SquaredConfig(grid_size=7, num_targets=3), PasswordConfig(length=5, password_seed=9),
        StochasticConfig(p=0.3, horizon=40), MemoryConfig(seq_len=6, delay=1), BanditConfig((0.2, 0.8)),
    ])
    def test_json_round_trip(self, cfg):
        assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg

    def test_config_needs_env(self):
        with pytest.raises(ConfigInvalid):
            config_from_dict({"length": 3})


class TestSquared:
    def test_center_reward_zero(self):
        env = make_ocean_env("squared", grid_size=11)
        env.reset(0)
        assert env.pos == (5, 5)
        assert squared_reward(env.pos, env.targets, env.hit, env.half) == 0.0

    def test_targets_on_perimeter(self):
        env = make_ocean_env("squared", grid_size=9, num_targets=6)
        env.reset(1)
        assert len(set(env.targets)) == 6
        assert all(r in (0, 8) or c in (0, 8) for r, c in env.targets)

    def test_hit_gives_full_reward_once(self):
        env = make_ocean_env("squared", grid_size=5, num_targets=2)
        env.reset(2)
        policy = oracle_policy("squared")
        obs = {0: env._grid}
        hits = []
        while not all(env.hit):
            before = sum(env.hit)
            obs, rew, *_ = env.step(policy(obs))
            if sum(env.hit) > before:
                hits.append(rew[0])
        assert hits == [1.0, 1.0]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.lists(st.integers(0, 8), min_size=1, max_size=60))
    def test_reward_range_and_no_double_credit(self, seed, moves):
        env = make_ocean_env("squared", grid_size=7, num_targets=3)
        env.reset(seed)
        for m in moves:
            was_hit = {t for t, h in zip(env.targets, env.hit) if h}
            _, rew, term, trunc, _ = env.step({0: m})
            assert -1.0 <= rew[0] <= 1.0
            if env.pos in was_hit:
                assert rew[0] < 1.0
            if term[0] or trunc[0]:
                break


class TestPassword:
    def _play(self, env, bits):
        env.reset(0)
        for b in bits:
            *_, term, _, _ = env.step({0: int(b)})
        return env.last_reward, term[0]

    def test_all_match(self):
        env = Password(PasswordConfig(length=4))
        assert self._play(env, env.password) == (1.0, True)

    def test_one_wrong(self):
        env = Password(PasswordConfig(length=4))
        bits = env.password.copy()
        bits[2] ^= 1
        assert self._play(env, bits) == (0.0, True)

    def test_revealed_only_first(self):
        env = Password(PasswordConfig(length=4))
        obs, _ = env.reset(0)
        assert obs[0][0] == 1.0 and (obs[0][1:] == env.password).all()
        obs, *_ = env.step({0: 0})
        assert not obs[0].any()

    def test_random_matches_exact_probability(self):
        env = make_ocean_env("password", length=8)
        score = evaluate_score(env, random_policy(env, 0), 10_000, seed=0)
        assert abs(score - 1 / 256) < 5 * np.sqrt((1 / 256) * (255 / 256) / 10_000)


class TestOracles:
    def test_stochastic_exact(self):
        env = make_ocean_env("stochastic", p=0.7, horizon=100)
        policy = oracle_policy("stochastic", env.cfg)
        assert evaluate_score(env, policy, 3, seed=0) == 1.0
        assert env.zeros == 70

    def test_bandit_monte_carlo(self):
        cfg = BanditConfig((0.2, 0.8))
        env = make_ocean_env(cfg)
        score = evaluate_score(env, oracle_policy("bandit", cfg), 10_000, seed=0)
        assert abs(score - 0.8) <= 0.02

    def test_multiagent_every_episode(self):
        env = make_ocean_env("multiagent")
        policy = oracle_policy("multiagent")
        for seed in range(10):
            assert evaluate_score(env, policy, 1, seed) == 1.0

    def test_multiagent_rewards(self):
        env = Multiagent()
        env.reset(0)
        assert env.step({1: 0, 2: 1})[1] == {1: 1.0, 2: 1.0}
        assert env.step({1: 1, 2: 0})[1] == {1: 0.0, 2: 0.0}

    @pytest.mark.parametrize("seq_len, delay", [(1, 0), (4, 2), (6, 0), (5, 4)])
    def test_memory_variants(self, seq_len, delay):
        cfg = MemoryConfig(seq_len=seq_len, delay=delay)
        env = make_ocean_env(cfg)
        assert evaluate_score(env, oracle_policy("memory", cfg), 50, seed=1) == 1.0

    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_oracle_above_bar(self, name):
        env = make_ocean_env(name)
        assert evaluate_score(env, oracle_policy(name), 100, seed=0) > 0.9

    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_random_below_threshold(self, name):
        env = make_ocean_env(name)
        assert evaluate_score(env, random_policy(env, 0), 100, seed=0) < RANDOM_THRESHOLDS[name]

    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_deterministic(self, name):
        env = make_ocean_env(name)
        a = evaluate_score(env, random_policy(env, 5), 20, seed=9)
        b = evaluate_score(env, random_policy(env, 5), 20, seed=9)
        assert a == b

    def test_episodes_must_be_positive(self):
        env = make_ocean_env("bandit")
        with pytest.raises(ValueError):
            evaluate_score(env, oracle_policy("bandit"), 0)


class _Fuzz(Policy):
    def __init__(self, env, seed, bias):
        self.inner = RandomPolicy(env.action_space, seed)
        self.bias = bias

    def __call__(self, observations):
        acts = self.inner(observations)
        if self.inner.rng.random() < self.bias:
            return {a: 0 if not isinstance(v, dict) else {k: 0 for k in v} for a, v in acts.items()}
        return acts


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(ENV_NAMES), st.integers(0, 1000), st.floats(0, 1))
def test_scores_normalized(name, seed, bias):
    env = make_ocean_env(name)
    score = evaluate_score(env, _Fuzz(env, seed, bias), 3, seed)
    assert 0.0 <= score <= 1.0


class _PartialSpacesPolicy(Policy):
    """Sees one subspace only; ``rule`` maps the target it can compute to an action."""

    def __init__(self, sees, const, rule):
        self.sees, self.const, self.rule = sees, const, rule

    def __call__(self, observations):
        a, b = spaces_targets(observations[0])
        seen = a if self.sees == "image" else b
        chosen = self.rule(seen)
        if self.sees == "image":
            return {0: {"a": chosen, "b": self.const}}
        return {0: {"a": self.const, "b": chosen}}


RULES = {"copy": lambda x: x, "flip": lambda x: 1 - x, "zero": lambda x: 0, "one": lambda x: 1}


def test_spaces_needs_both_subspaces():
    env = Spaces()
    best = 0.0
    for sees, const, rule in itertools.product(("image", "flat"), (0, 1), RULES):
        best = max(best, evaluate_score(env, _PartialSpacesPolicy(sees, const, RULES[rule]), 2000, seed=0))
    assert best <= 0.75
    assert evaluate_score(env, oracle_policy("spaces"), 200, seed=0) == 1.0
