"""``bench`` command line: throughput runs, autotune, and Ocean scoring."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from flatpool import ocean
from flatpool.autotune import TuneConstraints, autotune
from flatpool.bench import env_factory, load_profile, run_benchmark, write_report
from flatpool.errors import (
    ConfigInvalid,
    MeasurementTooShort,
    NoValidConfig,
    ProtocolViolation,
    SpawnFailure,
    UnknownEnv,
    VecTimeout,
    WorkerDead,
)
from flatpool.vector import VecConfig, select_code_path
from flatpool.vector.config import BACKENDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_WORKER = 3

CONFIG_ERRORS = (ConfigInvalid, NoValidConfig, UnknownEnv, MeasurementTooShort, FileNotFoundError, IsADirectoryError)
WORKER_ERRORS = (WorkerDead, SpawnFailure, VecTimeout, ProtocolViolation)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bench", description="Vectorized environment benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="measure one vectorization config on a profile")
    run.add_argument("--profile", required=True, help="profile JSON file or preset name")
    run.add_argument("--backend", choices=BACKENDS, default="shared")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--envs-per-worker", type=int, default=1)
    run.add_argument("--batch", type=int, default=None, help="slots per recv (default: all)")
    run.add_argument("--zero-copy", action="store_true")
    run.add_argument("--duration", type=float, default=3.0, help="seconds per measurement")
    run.add_argument("--spin-budget", type=int, default=None)
    run.add_argument("--out", type=Path, default=None, help="CSV path; a .json mirror is written beside it")

    tune = sub.add_parser("autotune", help="search for the fastest config")
    tune.add_argument("--profile", required=True)
    tune.add_argument("--max-workers", type=int, required=True)
    tune.add_argument("--batch", type=int, required=True)
    tune.add_argument("--env-budget", type=int, default=None, help="max total envs (default: 2 * workers * batch)")
    tune.add_argument("--min-envs-per-worker", type=int, default=1)
    tune.add_argument("--max-envs-per-worker", type=int, default=None, help="default: batch")
    tune.add_argument("--duration", type=float, default=1.0)
    tune.add_argument("--warmup", type=int, default=2)
    tune.add_argument("--backend", choices=BACKENDS, default="shared")
    tune.add_argument("--spin-budget", type=int, default=None)
    tune.add_argument("--out", type=Path, default=None)

    oc = sub.add_parser("ocean", help="score a policy on an Ocean env")
    oc.add_argument("--env", required=True, help=", ".join(ocean.ENV_NAMES))
    oc.add_argument("--policy", choices=("oracle", "random"), default="oracle")
    oc.add_argument("--episodes", type=int, default=100)
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--config", type=Path, default=None, help="JSON env config ({\"env\": name, ...})")
    return parser


def _cmd_run(args) -> int:
    profile = load_profile(args.profile)
    cfg = VecConfig(
        backend=args.backend, num_workers=args.workers, envs_per_worker=args.envs_per_worker,
        batch_size=args.batch, zero_copy=args.zero_copy, spin_budget=args.spin_budget,
    )
    select_code_path(cfg)
    report = run_benchmark([profile], [cfg], args.duration)
    row = report.rows[0]
    print(f"{row.profile} {cfg.short()} {row.code_path}: {row.sps:,.0f} steps/s "
          f"reset {row.pct_reset:.1f}% step_cv {row.step_cv:.2f} overhead {row.pct_overhead:.1f}%")
    if args.out is not None:
        csv_path, json_path = write_report(report, args.out)
        print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def _cmd_autotune(args) -> int:
    profile = load_profile(args.profile)
    constraints = TuneConstraints(
        max_workers=args.max_workers,
        batch_size=args.batch,
        total_env_budget=args.env_budget or 2 * args.max_workers * args.batch,
        min_envs_per_worker=args.min_envs_per_worker,
        max_envs_per_worker=args.max_envs_per_worker or args.batch,
        duration=args.duration,
        warmup=args.warmup,
        backend=args.backend,
        spin_budget=args.spin_budget,
    )
    report = autotune(env_factory(profile), constraints)
    for m in report.results:
        print(f"{m.sps:12,.0f} steps/s  p50 {m.p50_us:9.1f}us  p99 {m.p99_us:9.1f}us  "
              f"{m.config.short()} [{select_code_path(m.config).value}]")
    print(f"chosen: {report.chosen.short()} [{report.chosen_path.value}]")
    if args.out is not None:
        args.out.write_text(report.to_json() + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_ocean(args) -> int:
    if args.episodes < 1:
        raise ConfigInvalid("--episodes must be >= 1")
    if args.config is not None:
        try:
            cfg = ocean.config_from_dict(json.loads(args.config.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{args.config}: invalid JSON ({exc})") from None
        if ocean.config_name(cfg) != args.env.lower():
            raise ConfigInvalid(f"config is for {ocean.config_name(cfg)!r}, not {args.env!r}")
    else:
        cfg = ocean.make_config(args.env)
    env = ocean.make_ocean_env(cfg)
    if args.policy == "oracle":
        policy = ocean.oracle_policy(args.env, cfg)
    else:
        policy = ocean.random_policy(env, args.seed)
    score = ocean.evaluate_score(env, policy, args.episodes, args.seed)
    print(f"{score:.4f}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "autotune": _cmd_autotune, "ocean": _cmd_ocean}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WORKER_ERRORS as exc:
        print(f"worker failure: {exc}", file=sys.stderr)
        return EXIT_WORKER


if __name__ == "__main__":
    sys.exit(main())
