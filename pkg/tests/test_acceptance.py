"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n PASS|FAIL`` line (visible with or
without ``-s``) and enforces its runtime budget. Criteria 6 and 9 are
throughput claims and assume an idle machine with spare cores.
"""

from __future__ import annotations

import contextlib
import glob
import multiprocessing as mp
import time
import zlib
from collections import Counter
from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FlatEnv, MockMultiAgentEnv, drive, spaces
from flatpool.autotune import TuneConstraints, autotune, measure_config
from flatpool.bench import measure_emulation_overhead
from flatpool.emulation import wrap
from flatpool.errors import ShapeCheckFailed
from flatpool.ocean import ENV_NAMES, evaluate_score, make_ocean_env, oracle_policy, random_policy
from flatpool.spaces import (
    ELEM_KINDS,
    Box,
    Discrete,
    MapSpace,
    MultiDiscrete,
    TupleSpace,
    action_to_multidiscrete,
    decode_action,
    encode_action,
    flatten,
    sample,
    struct_equal,
    unflatten,
)
from flatpool.synthetic import SLOW_RESET, SyntheticEnvProfile, make_synthetic_env, read_counter
from flatpool.vector import CodePath, VecConfig, live_segments, open_vectorized, select_code_path
from test_ocean import RANDOM_THRESHOLDS

FAST = 50


@contextlib.contextmanager
def criterion(capsys, number, title, budget_s):
    t0 = time.perf_counter()
    status, detail = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert elapsed < budget_s, f"runtime {elapsed:.1f}s exceeds {budget_s}s"
        status = "PASS"
    except BaseException as exc:
        detail = f" ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        raise
    finally:
        elapsed = time.perf_counter() - t0
        with capsys.disabled():
            print(f"\nCRITERION {number} {status}: {title} [{elapsed:.1f}s]{detail}")


# -- 1. codec round trip -------------------------------------------------------

KINDS = sorted(ELEM_KINDS)


def random_space(rng, depth, discrete_only=False):
    kinds = ["discrete", "multi"] + ([] if discrete_only else ["box"]) + (["tuple", "map"] if depth > 0 else [])
    kind = kinds[rng.integers(len(kinds))]
    if kind == "discrete":
        return Discrete(int(rng.integers(1, 300)))
    if kind == "multi":
        return MultiDiscrete(rng.integers(1, 50, size=rng.integers(1, 5)).tolist())
    if kind == "box":
        shape = tuple(rng.integers(0, 4, size=rng.integers(0, 3)).tolist())
        return Box(shape, KINDS[rng.integers(len(KINDS))])
    children = [random_space(rng, depth - 1, discrete_only) for _ in range(rng.integers(1, 4))]
    if kind == "tuple":
        return TupleSpace(*children)
    keys = rng.choice(["a", "b", "obs", "Zeta", "ü", "_x", "10", "9"], size=len(children), replace=False)
    return MapSpace(dict(zip(keys.tolist(), children)))


def raw_value(space, rng):
    """Like ``sample`` but Box leaves are arbitrary bit patterns (NaN payloads, signed zeros)."""
    if isinstance(space, Box):
        dtype = np.dtype(space.dtype)
        return np.frombuffer(rng.bytes(dtype.itemsize * int(np.prod(space.shape))), dtype).reshape(space.shape).copy()
    if isinstance(space, TupleSpace):
        return tuple(raw_value(c, rng) for c in space.children)
    if isinstance(space, MapSpace):
        return {k: raw_value(c, rng) for k, c in space.items()}
    return sample(space, rng)


def test_criterion_1_codec_round_trip(capsys):
    with criterion(capsys, 1, "codec round trip, 10,000 pairs", 30):
        rng = np.random.default_rng(2024)
        for i in range(10_000):
            space = random_space(rng, 3)
            value = raw_value(space, rng)
            back = unflatten(flatten(value, space), space)
            assert struct_equal(back, value), f"pair {i}: {space!r}"
            aspace = random_space(rng, 3, discrete_only=True)
            action = sample(aspace, rng)
            vec = encode_action(action, aspace)
            assert vec.shape == (len(action_to_multidiscrete(aspace).nvec),)
            assert struct_equal(decode_action(vec, aspace), action), f"action {i}: {aspace!r}"


# -- 2. emulation transparency and padding ------------------------------------------


def _emulate(space, seed, order_seed, max_agents, steps=8):
    env = MockMultiAgentEnv(space, max_agents=max_agents, seed=seed, order_seed=order_seed, episode_length=3)
    w = wrap(env)
    rng = np.random.default_rng(seed)
    res = w.reset(seed)
    rows = []
    for t in range(steps + 1):
        assert res.obs_block.shape == (max_agents, w.obs_layout.total_bytes)
        assert res.mask.shape == res.rewards.shape == (max_agents,)
        assert not res.obs_block[~res.mask].any() and not res.rewards[~res.mask].any()
        live = res.agent_ids
        assert list(live) == sorted(live)
        if t < steps:
            if not res.terminals.any():
                for r, a in enumerate(live):
                    assert res.obs_block[r].tobytes() == flatten(env.obs[a], space).tobytes()
            rows.append((res.obs_block.tobytes(), res.rewards.tobytes(), res.mask.tobytes()))
            res = w.step(rng.integers(0, 3, size=(max_agents, len(w.action_spec))).astype(np.int32))
    return rows


@settings(max_examples=150, deadline=None)
@given(spaces(2), st.integers(0, 10_000), st.integers(1, 5))
def _emulation_property(space, seed, max_agents):
    assert _emulate(space, seed, 1, max_agents) == _emulate(space, seed, 2, max_agents)


def test_criterion_2_emulation_properties(capsys):
    with criterion(capsys, 2, "emulation ordering, padding, fixed sizes, latch", 30):
        _emulation_property()
        # latch: the first step is checked, later ones are not
        env = FlatEnv()
        w = wrap(env)
        w.reset(0)
        w.step(np.zeros((1, 1), np.int32))
        assert w.checked
        original = env.step
        env.step = lambda a: ({0: np.zeros(4, np.float64)}, *original(a)[1:])
        w.step(np.zeros((1, 1), np.int32))
        w2 = wrap(FlatEnv())
        w2.reset(0)
        w2.env.step = lambda a: ({0: np.zeros(4, np.float64)}, {0: 0.0}, {0: False}, {0: False}, {})
        with pytest.raises(ShapeCheckFailed):
            w2.step(np.zeros((1, 1), np.int32))


# -- 3. emulation overhead ----------------------------------------------------------


def test_criterion_3_emulation_overhead(capsys):
    with criterion(capsys, 3, "emulation overhead under 100 us per step", 60):
        o = measure_emulation_overhead(steps=20_000, repeats=5)
        with capsys.disabled():
            print(f"\n  raw {o.raw_us:.2f} us, wrapped {o.wrapped_us:.2f} us, overhead {o.overhead_us:.2f} us")
        assert o.overhead_us < 100


# -- 4. parallel equals serial ------------------------------------------------------

TRAJ_PROFILE = SyntheticEnvProfile(name="traj", obs_bytes=24, n_actions=3, episode_length=7, max_agents=2)
PATH_CONFIGS = {
    CodePath.SYNCHRONOUS: dict(num_workers=4, envs_per_worker=2, batch_size=None),
    CodePath.ASYNC_COPY: dict(num_workers=4, envs_per_worker=1, batch_size=2),
    CodePath.ASYNC_WHOLE_WORKER: dict(num_workers=4, envs_per_worker=2, batch_size=2),
    CodePath.ZERO_COPY: dict(num_workers=8, envs_per_worker=1, batch_size=2, zero_copy=True),
}


def test_criterion_4_parallel_equals_serial(capsys):
    with criterion(capsys, 4, "per-slot trajectories match serial on all four paths", 120):
        factory = partial(make_synthetic_env, TRAJ_PROFILE)
        for path, kw in PATH_CONFIGS.items():
            shared = VecConfig("shared", spin_budget=FAST, **kw)
            serial = VecConfig("serial", **kw)
            assert select_code_path(shared) is path and shared.num_envs <= 8
            recvs = 1000 * shared.num_envs // shared.batch
            runs = []
            for cfg in (shared, serial):
                with open_vectorized(factory, cfg) as vec:
                    runs.append(drive(vec, recvs, seed=17, n_actions=3))
            a, b = runs
            assert sorted(a) == sorted(b) == list(range(shared.num_envs))
            for k in a:
                assert min(len(a[k]), len(b[k])) >= 1000, f"{path.value} slot {k} too short"
                assert a[k][:1000] == b[k][:1000], f"{path.value} slot {k} diverged"


# -- 5. exactly once ------------------------------------------------------------------


def test_criterion_5_exactly_once(capsys):
    with criterion(capsys, 5, "exactly-once and 4-recv liveness over 10,000 async-copy recvs", 120):
        counting = SyntheticEnvProfile(name="count", obs_bytes=16, n_actions=2, episode_length=50)
        cfg = VecConfig("shared", num_workers=8, envs_per_worker=1, batch_size=2, spin_budget=FAST)
        assert select_code_path(cfg) is CodePath.ASYNC_COPY
        M, N = cfg.num_envs, cfg.batch
        with open_vectorized(partial(make_synthetic_env, counting), cfg) as vec:
            vec.async_reset(0)
            last, sent_at, appearances = {}, {}, Counter()
            zeros = np.zeros(vec.action_shape(), np.int32)
            for i in range(10_000):
                b = vec.recv()
                for j, k in enumerate(b.env_slot_ids.tolist()):
                    c = read_counter(b.observations[j, 0])
                    assert c == last.get(k, -1) + 1, f"slot {k} counter {c} after {last.get(k)}"
                    last[k] = c
                    appearances[k] += 1
                    if k in sent_at:
                        assert i - sent_at[k] <= M // N, f"slot {k} waited {i - sent_at[k]} recvs"
                for k in b.env_slot_ids.tolist():
                    sent_at[k] = i
                vec.send(b.env_slot_ids, zeros)
        assert sorted(last) == list(range(M))
        assert sum(appearances.values()) == 10_000 * N


# -- 6. pool speedup ----------------------------------------------------------------


def test_criterion_6_pool_speedup(capsys):
    with criterion(capsys, 6, "async pool (M=2N) at least 1.3x synchronous on slow-reset", 180):
        factory = partial(make_synthetic_env, SLOW_RESET)
        sync = VecConfig("shared", num_workers=8, envs_per_worker=1)
        pool = VecConfig("shared", num_workers=8, envs_per_worker=2, batch_size=8)
        assert select_code_path(sync) is CodePath.SYNCHRONOUS and select_code_path(pool) is not CodePath.SYNCHRONOUS
        s = measure_config(factory, sync, duration=15.0)
        p = measure_config(factory, pool, duration=15.0)
        ratio = p.sps / s.sps
        with capsys.disabled():
            print(f"\n  sync {s.sps:.0f} sps, pool {p.sps:.0f} sps, ratio {ratio:.2f}, cores {len(_cores())}")
        assert ratio >= 1.3, f"ratio {ratio:.2f} < 1.3"


def _cores():
    import os

    return os.sched_getaffinity(0) if hasattr(os, "sched_getaffinity") else range(os.cpu_count() or 1)


# -- 7. zero-copy validity ---------------------------------------------------------


def test_criterion_7_zero_copy(capsys):
    with criterion(capsys, 7, "zero-copy batch stable until its own group is sent", 30):
        profile = SyntheticEnvProfile(name="zc", obs_bytes=16, n_actions=3, episode_length=9)
        cfg = VecConfig("shared", num_workers=8, envs_per_worker=1, batch_size=2, zero_copy=True, spin_budget=FAST)
        assert select_code_path(cfg) is CodePath.ZERO_COPY
        with open_vectorized(partial(make_synthetic_env, profile), cfg) as vec:
            vec.async_reset(0)
            zeros = np.zeros(vec.action_shape(), np.int32)
            groups = [vec.recv() for _ in range(4)]  # rotation: next recv is group 0
            for round_ in range(20):
                g = round_ % 4
                target, others = groups[g], groups[g + 1:] + groups[:g]
                assert target.is_view
                before = zlib.crc32(target.observations.tobytes())
                for other in others:
                    vec.send(other.env_slot_ids, zeros)
                time.sleep(0.01)  # give the unrelated workers time to write
                assert zlib.crc32(target.observations.tobytes()) == before
                vec.send(target.env_slot_ids, zeros)
                for expected in [target] + others:
                    assert vec.recv().env_slot_ids.tolist() == expected.env_slot_ids.tolist()
                assert zlib.crc32(target.observations.tobytes()) != before
                vec.send(target.env_slot_ids, zeros)  # advance the rotation to the next group
                assert vec.recv().env_slot_ids.tolist() == target.env_slot_ids.tolist()


# -- 8. ocean bars -------------------------------------------------------------------


def test_criterion_8_ocean(capsys):
    with criterion(capsys, 8, "ocean oracles above 0.9, random below thresholds", 60):
        scores = {}
        for name in ENV_NAMES:
            env = make_ocean_env(name)
            oracle = evaluate_score(env, oracle_policy(name), 100, seed=0)
            rand = evaluate_score(env, random_policy(env, 0), 100, seed=0)
            scores[name] = (oracle, rand)
        with capsys.disabled():
            print("\n  " + ", ".join(f"{n} {o:.2f}/{r:.2f}" for n, (o, r) in scores.items()))
        for name, (oracle, rand) in scores.items():
            assert oracle > 0.9, f"{name} oracle {oracle}"
            assert rand < RANDOM_THRESHOLDS[name], f"{name} random {rand}"


# -- 9. autotune soundness --------------------------------------------------------


ASYNC_PATHS = {CodePath.ASYNC_COPY, CodePath.ASYNC_WHOLE_WORKER, CodePath.ZERO_COPY}


def test_criterion_9_autotune(capsys):
    with criterion(capsys, 9, "autotune picks a stable async config on slow-reset", 300):
        factory = partial(make_synthetic_env, SLOW_RESET)
        constraints = TuneConstraints(max_workers=8, batch_size=8, total_env_budget=16,
                                      min_envs_per_worker=1, max_envs_per_worker=2, duration=1.0, warmup=1)
        chosen = []
        for run in range(5):
            report = autotune(factory, constraints)
            chosen.append(report.chosen_path)
            if run == 0:
                for m in report.results:
                    with open_vectorized(factory, m.config) as vec:
                        vec.reset(0)
                with capsys.disabled():
                    print("\n  " + ", ".join(f"{m.config.short()} {m.sps:.0f}" for m in report.results))
        path, count = Counter(chosen).most_common(1)[0]
        with capsys.disabled():
            print(f"  chosen paths: {[p.value for p in chosen]}")
        assert count >= 4, f"chosen path stable in {count}/5 runs"
        assert path in ASYNC_PATHS, f"chosen {path.value}"


# -- 10. teardown hygiene ----------------------------------------------------------


def test_criterion_10_teardown(capsys):
    with criterion(capsys, 10, "100 open/close cycles leak nothing", 60):
        factory = partial(make_synthetic_env, SyntheticEnvProfile(name="td", obs_bytes=8, episode_length=4))
        before_segments = live_segments()
        before_files = set(glob.glob("/dev/shm/flatpool_*"))
        before_children = {p.pid for p in mp.active_children()}
        for i in range(100):
            cfg = VecConfig("shared", num_workers=2, envs_per_worker=1, batch_size=1 if i % 2 else None,
                            spin_budget=FAST)
            vec = open_vectorized(factory, cfg)
            vec.async_reset(i)
            b = vec.recv()
            vec.send(b.env_slot_ids, np.zeros(vec.action_shape(len(b.env_slot_ids)), np.int32))
            vec.close()
            assert vec.leaked_workers == 0
        assert live_segments() == before_segments
        assert set(glob.glob("/dev/shm/flatpool_*")) == before_files
        assert {p.pid for p in mp.active_children()} <= before_children
