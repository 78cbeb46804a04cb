"""Serial and shared-memory vectorized environments.

Both backends share one controller; they differ only in who executes a
worker's command. The serial backend runs it inline the moment the flag is
raised. The shared backend forks one process per worker; each process
busy-waits on its flag word in a shared segment, steps its environments
straight into the shared arrays, and flips the flag back.

Flag protocol (one word per worker, exactly one writer at a time)::

    controller: OBS_READY/IDLE -> ACTIONS_READY | RESET_REQUESTED
    worker:     ACTIONS_READY  -> STEPPING -> OBS_READY
    worker:     any            -> FAILED  (exception sent over the pipe)

Data written before a flag store is visible to the other side once it sees
the new flag value: CPython issues the stores in program order and x86-64
keeps store order across cores. Shutdown uses a separate word so it can
never be lost to a worker's own flag store.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import os
import time
import traceback
import uuid
from collections import deque
from dataclasses import dataclass, field
from multiprocessing import shared_memory
from typing import Callable

import numpy as np

from flatpool.emulation import EmulatedEnv, Env
from flatpool.errors import (
    ConfigInvalid,
    ProtocolViolation,
    SpawnFailure,
    VecTimeout,
    WorkerDead,
)
from flatpool.spaces import ActionCodec, infer_layout
from flatpool.vector.config import CodePath, VecConfig, select_code_path
from flatpool.vector.layout import (
    ACTIONS_READY,
    FAILED,
    IDLE,
    OBS_READY,
    RESET_REQUESTED,
    STARTING,
    STEPPING,
    SharedLayout,
)

log = logging.getLogger(__name__)

SEGMENT_PREFIX = "flatpool_"
MAX_BACKOFF = 1e-3
JOIN_GRACE = 5.0

EnvFactory = Callable[[int], Env]

_LIVE_SEGMENTS: set[str] = set()


def live_segments() -> set[str]:
    """Names of shared segments created by this process and not yet released."""
    return set(_LIVE_SEGMENTS)


@dataclass
class Batch:
    """One :meth:`VecEnv.recv` result.

    On the synchronous, whole-worker and zero-copy paths the arrays are
    windows onto the shared region and stay valid until the next send to the
    workers that produced them. On the async-copy path they live in a
    reusable batch buffer, valid until the next recv.
    """

    env_slot_ids: np.ndarray
    observations: np.ndarray  # (N, A, B) uint8
    rewards: np.ndarray  # (N, A) float32
    terminals: np.ndarray  # (N, A) bool
    truncations: np.ndarray  # (N, A) bool
    masks: np.ndarray  # (N, A) bool
    infos: list[tuple[int, dict]] = field(default_factory=list)
    code_path: CodePath | None = None

    @property
    def is_view(self) -> bool:
        return self.code_path is not CodePath.ASYNC_COPY


class _WorkerEnvs:
    """The ``E`` emulated envs of one worker, bound to shared arrays."""

    def __init__(self, index: int, factory: EnvFactory, cfg: VecConfig, views: dict):
        E, M = cfg.envs_per_worker, cfg.num_envs
        self.index = index
        self.slots = range(index * E, (index + 1) * E)
        self.actions = views["actions"]
        self.heartbeats = views["heartbeats"]
        self.envs = []
        for k in self.slots:
            buffers = {name: views[name][k] for name in ("observations", "rewards", "terminals", "truncations", "masks")}
            self.envs.append(EmulatedEnv(factory(cfg.seed_base + k), buffers=buffers, seed_stride=M))

    def reset(self, seed: int) -> list:
        for k, emu in zip(self.slots, self.envs):
            emu.reset(seed + k)
            self.heartbeats[self.index] += 1
        return []

    def step(self) -> list:
        infos = []
        for k, emu in zip(self.slots, self.envs):
            result = emu.step(self.actions[k])
            self.heartbeats[self.index] += 1
            if result.infos:
                infos.extend((k, rec) for rec in result.infos)
        return infos

    def close(self) -> None:
        for emu in self.envs:
            emu.close()


def _picklable(exc: BaseException) -> BaseException:
    import pickle

    try:
        pickle.dumps(exc)
        return exc
    except Exception:
        return RuntimeError(f"{type(exc).__name__}: {exc}")


def _worker_main(index: int, factory: EnvFactory, cfg: VecConfig, layout: SharedLayout,
                 shm: shared_memory.SharedMemory, conn, parent_pid: int) -> None:
    views = layout.views(shm.buf)
    flags, shutdown, seeds, info_counts = views["flags"], views["shutdown"], views["seeds"], views["info_counts"]
    spin_budget = cfg.resolved_spin_budget()
    try:
        envs = _WorkerEnvs(index, factory, cfg, views)
    except BaseException as exc:  # report construction errors to the controller
        conn.send(("error", _picklable(exc), traceback.format_exc()))
        flags[index] = FAILED
        return
    flags[index] = IDLE

    while True:
        spins = 0
        delay = 1e-6
        while True:
            cmd = flags[index]
            if cmd == ACTIONS_READY or cmd == RESET_REQUESTED:
                break
            if shutdown[0]:
                envs.close()
                return
            spins += 1
            if spins > spin_budget:
                time.sleep(delay)
                delay = min(delay * 2, MAX_BACKOFF)
                if os.getppid() != parent_pid:
                    return
        flags[index] = STEPPING
        try:
            infos = envs.reset(int(seeds[index])) if cmd == RESET_REQUESTED else envs.step()
        except BaseException as exc:
            conn.send(("error", _picklable(exc), traceback.format_exc()))
            flags[index] = FAILED
            continue
        if infos:
            conn.send(("infos", infos))
            info_counts[index] = 1
        else:
            info_counts[index] = 0
        flags[index] = OBS_READY


class VecEnv:
    """Controller for ``M = num_workers * envs_per_worker`` environment slots.

    Use :func:`open_vectorized` to construct. A single thread must own the
    handle; :meth:`send`, :meth:`recv` and :meth:`close` are not reentrant.
    """

    def __init__(self, env_factory: EnvFactory, cfg: VecConfig):
        self.cfg = cfg
        self.code_path = select_code_path(cfg)
        self.num_envs = M = cfg.num_envs
        self.num_workers = W = cfg.num_workers
        self.envs_per_worker = E = cfg.envs_per_worker
        self.batch_size = N = cfg.batch
        self._closed = False
        self._owner_pid = os.getpid()
        self._procs: list = []
        self._conns: list = []
        self._shm: shared_memory.SharedMemory | None = None
        self._serial_workers: list[_WorkerEnvs] = []
        self._serial_infos: list[list] = [[] for _ in range(W)]
        self.leaked_workers = 0

        probe = env_factory(cfg.seed_base)
        try:
            self.observation_space = probe.observation_space
            self.action_space = probe.action_space
            self.max_agents = int(probe.max_agents)
            self.obs_layout = infer_layout(self.observation_space)
            self.action_codec = ActionCodec(self.action_space)
        finally:
            probe.close()
        self.action_spec = self.action_codec.spec
        self.layout = SharedLayout(M, self.max_agents, self.obs_layout.total_bytes, len(self.action_spec), W)

        if cfg.backend == "shared":
            self._open_shared(env_factory)
        else:
            self._buf = bytearray(self.layout.total_bytes)
            self._views = self.layout.views(self._buf)
            self._bind_views()
            self._serial_workers = [_WorkerEnvs(w, env_factory, cfg, self._views) for w in range(W)]
            self._flags[:] = IDLE

        # controller-side bookkeeping
        self._in_flight = np.zeros(W, dtype=bool)  # commanded, result not yet taken
        self._awaiting_send = np.zeros(M, dtype=bool)  # slot handed out by recv, no action yet
        self._sent = np.zeros(M, dtype=bool)  # action written, worker not yet commanded
        self._ready_fifo: deque[int] = deque()
        self._queued = np.zeros(W, dtype=bool)
        self._recv_count = 0
        self._deadline = np.zeros(W, dtype=np.int64)  # last recv index a commanded worker may miss
        self._next_group = 0
        self._groups = W // cfg.workers_per_batch if self.code_path is CodePath.ZERO_COPY else 0
        self._reset_done = False
        if self.code_path is CodePath.ASYNC_COPY:
            A, B = self.max_agents, self.obs_layout.total_bytes
            self._copy_obs = np.empty((N, A, B), dtype=np.uint8)
            self._copy_rew = np.empty((N, A), dtype=np.float32)
            self._copy_term = np.empty((N, A), dtype=np.uint8)
            self._copy_trunc = np.empty((N, A), dtype=np.uint8)
            self._copy_mask = np.empty((N, A), dtype=np.uint8)
        self._spin_budget = cfg.resolved_spin_budget()
        self._hb_timeout = cfg.resolved_heartbeat_timeout()
        self._hb_seen = np.zeros(W, dtype=np.int64)
        self._hb_time = np.zeros(W, dtype=np.float64)

    # -- setup / teardown ---------------------------------------------------------

    def _bind_views(self) -> None:
        v = self._views
        self._obs = v["observations"]
        self._actions = v["actions"]
        self._rew = v["rewards"]
        self._term = v["terminals"]
        self._trunc = v["truncations"]
        self._mask = v["masks"]
        self._flags = v["flags"]
        self._heartbeats = v["heartbeats"]
        self._info_counts = v["info_counts"]
        self._seeds = v["seeds"]
        self._shutdown = v["shutdown"]

    def _open_shared(self, env_factory: EnvFactory) -> None:
        ctx = mp.get_context("fork")
        name = SEGMENT_PREFIX + uuid.uuid4().hex[:16]
        self._shm = shared_memory.SharedMemory(name=name, create=True, size=self.layout.total_bytes)
        _LIVE_SEGMENTS.add(name)
        self._views = self.layout.views(self._shm.buf)
        self._views["flags"][:] = STARTING
        self._views["shutdown"][0] = 0
        self._bind_views()
        try:
            for w in range(self.num_workers):
                recv_conn, send_conn = ctx.Pipe(duplex=False)
                proc = ctx.Process(
                    target=_worker_main,
                    args=(w, env_factory, self.cfg, self.layout, self._shm, send_conn, os.getpid()),
                    daemon=True,
                    name=f"flatpool-worker-{w}",
                )
                proc.start()
                send_conn.close()
                self._procs.append(proc)
                self._conns.append(recv_conn)
            deadline = time.monotonic() + max(self.cfg.resolved_heartbeat_timeout(), 10.0)
            for w, proc in enumerate(self._procs):
                while self._flags[w] == STARTING:
                    if not proc.is_alive():
                        raise SpawnFailure(f"worker {w} exited during startup (code {proc.exitcode})")
                    if time.monotonic() > deadline:
                        raise SpawnFailure(f"worker {w} did not start in time")
                    time.sleep(1e-4)
                if self._flags[w] == FAILED:
                    _, exc, tb = self._conns[w].recv()
                    raise SpawnFailure(f"worker {w} failed to build its environments:\n{tb}") from exc
        except BaseException:
            self.close()
            raise

    def close(self) -> None:
        """Stop workers and release the shared region. Idempotent."""
        if self._closed or os.getpid() != self._owner_pid:
            return
        self._closed = True
        if self._shm is not None:
            self._shutdown[0] = 1
            deadline = time.monotonic() + JOIN_GRACE
            for proc in self._procs:
                proc.join(max(0.0, deadline - time.monotonic()))
            for proc in self._procs:
                if proc.is_alive():
                    proc.terminate()
                    proc.join(1.0)
                if proc.is_alive():
                    proc.kill()
                    proc.join(1.0)
            self.leaked_workers = sum(p.is_alive() for p in self._procs)
            if self.leaked_workers:
                log.warning("%d worker(s) could not be stopped", self.leaked_workers)
            for conn in self._conns:
                conn.close()
            for proc in self._procs:
                if not proc.is_alive():
                    proc.close()
            self._procs = []
            self._drop_views()
            name = self._shm.name
            try:
                self._shm.close()
            except BufferError:
                # a caller still holds a zero-copy batch; the mapping outlives the name
                pass
            self._shm.unlink()
            _LIVE_SEGMENTS.discard(name)
            self._shm = None
        else:
            for worker in self._serial_workers:
                worker.close()
            self._serial_workers = []
            self._drop_views()

    def _drop_views(self) -> None:
        for attr in ("_views", "_obs", "_actions", "_rew", "_term", "_trunc", "_mask", "_flags",
                     "_heartbeats", "_info_counts", "_seeds", "_shutdown"):
            if hasattr(self, attr):
                delattr(self, attr)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    @property
    def closed(self) -> bool:
        return self._closed

    # -- worker signalling ----------------------------------------------------------

    def _check_open(self) -> None:
        if self._closed:
            raise WorkerDead("vectorized env is closed")

    def _command(self, w: int, cmd: int) -> None:
        self._in_flight[w] = True
        self._deadline[w] = self._recv_count - 1 + self.num_envs // self.batch_size
        self._hb_time[w] = time.monotonic()
        self._hb_seen[w] = self._heartbeats[w]
        if self._shm is not None:
            self._flags[w] = cmd
            return
        worker = self._serial_workers[w]
        self._flags[w] = STEPPING
        if cmd == RESET_REQUESTED:
            self._serial_infos[w] = worker.reset(int(self._seeds[w]))
        else:
            self._serial_infos[w] = worker.step()
        self._info_counts[w] = 1 if self._serial_infos[w] else 0
        self._flags[w] = OBS_READY

    def _take_infos(self, w: int, out: list) -> None:
        if not self._info_counts[w]:
            return
        if self._shm is None:
            out.extend(self._serial_infos[w])
            self._serial_infos[w] = []
        else:
            for _ in range(int(self._info_counts[w])):
                kind, payload = self._conns[w].recv()[:2]
                out.extend(payload)
        self._info_counts[w] = 0

    def _raise_failure(self, w: int) -> None:
        if self._shm is None:
            raise WorkerDead(f"worker {w} failed")
        msg = self._conns[w].recv()
        while msg[0] != "error":
            msg = self._conns[w].recv()
        _, exc, tb = msg
        self._in_flight[w] = False
        log.debug("worker %d traceback:\n%s", w, tb)
        raise WorkerDead(f"worker {w} raised {exc!r}\n{tb}") from exc

    def _health_check(self, waiting_on, started: float) -> None:
        now = time.monotonic()
        if self.cfg.recv_timeout is not None and now - started > self.cfg.recv_timeout:
            raise VecTimeout(f"recv exceeded {self.cfg.recv_timeout}s")
        for w in waiting_on:
            if self._flags[w] == FAILED:
                self._raise_failure(w)
            proc = self._procs[w] if self._procs else None
            if proc is not None and not proc.is_alive():
                raise WorkerDead(f"worker {w} exited (code {proc.exitcode})")
            hb = self._heartbeats[w]
            if hb != self._hb_seen[w]:
                self._hb_seen[w] = hb
                self._hb_time[w] = now
            elif now - self._hb_time[w] > self._hb_timeout:
                raise WorkerDead(f"worker {w} made no progress for {self._hb_timeout}s")

    def _poll_ready(self) -> None:
        """Queue every in-flight worker whose results are ready, in index order."""
        flags = self._flags
        for w in np.flatnonzero(self._in_flight & ~self._queued):
            f = flags[w]
            if f == OBS_READY:
                self._ready_fifo.append(int(w))
                self._queued[w] = True
            elif f == FAILED:
                self._raise_failure(int(w))

    def _wait_fifo(self, count: int) -> list[int]:
        """Pick ``count`` workers: overdue ones first, the rest first-ready.

        A worker commanded before recv ``r`` is overdue once ``M / N`` recvs
        have passed without it; taking it then bounds starvation while
        leaving every other seat to whichever workers finish first.
        """
        if self._in_flight.sum() < count:
            raise ProtocolViolation("recv would block forever: not enough workers have outstanding work")
        due = np.flatnonzero(self._in_flight & (self._deadline <= self._recv_count))
        due = sorted(due.tolist(), key=lambda w: (self._deadline[w], w))[:count]
        started = time.monotonic()
        spins = 0
        delay = 1e-6
        flags = self._flags
        self._poll_ready()
        while True:
            if all(flags[w] == OBS_READY for w in due):
                others = sum(1 for w in self._ready_fifo if w not in due)
                if len(due) + others >= count:
                    break
            spins += 1
            if spins > self._spin_budget:
                self._health_check(np.flatnonzero(self._in_flight & ~self._queued), started)
                time.sleep(delay)
                delay = min(delay * 2, MAX_BACKOFF)
            self._poll_ready()
        chosen = list(due)
        keep: deque[int] = deque()
        for w in self._ready_fifo:
            if w in due:
                continue
            if len(chosen) < count:
                chosen.append(w)
            else:
                keep.append(w)
        self._ready_fifo = keep
        return chosen

    def _wait_workers(self, workers: range) -> None:
        started = time.monotonic()
        spins = 0
        delay = 1e-6
        flags = self._flags
        for w in workers:
            if not self._in_flight[w]:
                raise ProtocolViolation(f"recv waits on worker {w}, which has no outstanding work")
        for w in workers:
            while True:
                f = flags[w]
                if f == OBS_READY:
                    break
                if f == FAILED:
                    self._raise_failure(w)
                spins += 1
                if spins > self._spin_budget:
                    self._health_check([w], started)
                    time.sleep(delay)
                    delay = min(delay * 2, MAX_BACKOFF)

    def _mark_received(self, workers, infos: list) -> None:
        E = self.envs_per_worker
        self._recv_count += 1
        for w in workers:
            self._in_flight[w] = False
            self._queued[w] = False
            self._awaiting_send[w * E:(w + 1) * E] = True
            self._take_infos(w, infos)

    # -- public protocol -------------------------------------------------------------

    def async_reset(self, seed: int | None = None) -> None:
        """Reset every slot; slot ``k`` is seeded with ``seed + k``
        (``seed`` defaults to ``cfg.seed_base``)."""
        self._check_open()
        seed = self.cfg.seed_base if seed is None else int(seed)
        pending = np.flatnonzero(self._in_flight)
        if len(pending):
            self._wait_workers(pending.tolist())
            discard: list = []
            self._mark_received(pending.tolist(), discard)
        self._ready_fifo.clear()
        self._queued[:] = False
        self._recv_count = 0
        self._awaiting_send[:] = False
        self._sent[:] = False
        self._next_group = 0
        self._seeds[:] = seed
        for w in range(self.num_workers):
            self._command(w, RESET_REQUESTED)
        self._reset_done = True

    def send(self, slot_ids, actions) -> None:
        """Deliver actions for previously received slots.

        ``actions`` has shape ``(len(slot_ids), max_agents, len(nvec))``. A
        worker is commanded once all of its slots have actions.
        """
        self._check_open()
        slots = np.asarray(slot_ids, dtype=np.int64).reshape(-1)
        if len(slots) == 0:
            return
        if slots.min() < 0 or slots.max() >= self.num_envs:
            raise ProtocolViolation(f"slot ids outside [0, {self.num_envs})")
        if len(np.unique(slots)) != len(slots):
            raise ProtocolViolation("duplicate slot ids in one send")
        if not self._awaiting_send[slots].all():
            bad = slots[~self._awaiting_send[slots]].tolist()
            raise ProtocolViolation(f"slots {bad} were not handed out by recv (or were already sent)")
        acts = np.asarray(actions)
        shape = (len(slots), self.max_agents, len(self.action_spec))
        if acts.size != np.prod(shape):
            raise ValueError(f"actions must have shape {shape}, got {acts.shape}")
        acts = acts.reshape(shape)
        lo, hi = int(slots[0]), int(slots[-1]) + 1
        if hi - lo == len(slots) and (np.diff(slots) == 1).all():
            self._actions[lo:hi] = acts
        else:
            self._actions[slots] = acts
        self._awaiting_send[slots] = False
        self._sent[slots] = True
        E = self.envs_per_worker
        for w in np.unique(slots // E):
            w = int(w)
            if self._sent[w * E:(w + 1) * E].all():
                self._sent[w * E:(w + 1) * E] = False
                self._command(w, ACTIONS_READY)

    def recv(self) -> Batch:
        """Wait for the next batch of ``batch_size`` slots."""
        self._check_open()
        if not self._reset_done:
            raise ProtocolViolation("call async_reset before recv")
        path = self.code_path
        E = self.envs_per_worker
        infos: list = []
        if path is CodePath.SYNCHRONOUS:
            workers = range(self.num_workers)
            self._wait_workers(workers)
            self._mark_received(workers, infos)
            return self._view_batch(0, self.num_envs, infos)
        if path is CodePath.ZERO_COPY:
            G = self.cfg.workers_per_batch
            g = self._next_group
            workers = range(g * G, (g + 1) * G)
            self._wait_workers(workers)
            self._mark_received(workers, infos)
            self._next_group = (g + 1) % self._groups
            return self._view_batch(g * self.batch_size, (g + 1) * self.batch_size, infos)
        if path is CodePath.ASYNC_WHOLE_WORKER:
            (w,) = self._wait_fifo(1)
            self._mark_received([w], infos)
            return self._view_batch(w * E, (w + 1) * E, infos)
        workers = self._wait_fifo(self.cfg.workers_per_batch)
        self._mark_received(workers, infos)
        slots = np.concatenate([np.arange(w * E, (w + 1) * E) for w in workers])
        np.take(self._obs, slots, axis=0, out=self._copy_obs)
        np.take(self._rew, slots, axis=0, out=self._copy_rew)
        np.take(self._term, slots, axis=0, out=self._copy_term)
        np.take(self._trunc, slots, axis=0, out=self._copy_trunc)
        np.take(self._mask, slots, axis=0, out=self._copy_mask)
        return Batch(
            slots, self._copy_obs, self._copy_rew,
            self._copy_term.view(np.bool_), self._copy_trunc.view(np.bool_), self._copy_mask.view(np.bool_),
            infos, path,
        )

    def _view_batch(self, lo: int, hi: int, infos: list) -> Batch:
        return Batch(
            np.arange(lo, hi),
            self._obs[lo:hi],
            self._rew[lo:hi],
            self._term[lo:hi].view(np.bool_),
            self._trunc[lo:hi].view(np.bool_),
            self._mask[lo:hi].view(np.bool_),
            infos,
            self.code_path,
        )

    def sync_step(self, actions) -> Batch:
        """Send actions for all slots and receive all of them."""
        if self.code_path is not CodePath.SYNCHRONOUS:
            raise ConfigInvalid("sync_step needs batch_size == num_envs")
        self.send(np.arange(self.num_envs), actions)
        return self.recv()

    def reset(self, seed: int | None = None) -> Batch:
        self.async_reset(seed)
        return self.recv()

    def worker_flags(self) -> np.ndarray:
        """Snapshot of every worker's flag word."""
        self._check_open()
        return self._flags.copy()

    def action_shape(self, n: int | None = None) -> tuple[int, int, int]:
        return (self.batch_size if n is None else n, self.max_agents, len(self.action_spec))


def open_vectorized(env_factory: EnvFactory, cfg: VecConfig) -> VecEnv:
    """Allocate buffers and start workers. ``env_factory(seed)`` must build
    environments with identical spaces."""
    return VecEnv(env_factory, cfg)
