"""Command-line surface: launch daemons, run searches and baselines,
describe architectures, and run the scaling experiment.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime or
dispatch failure.  Every flag can also be set through an environment
variable named EVONAS_<FLAG> (dashes become underscores, upper-cased),
e.g. EVONAS_DELAY_MS=200; explicit flags win.  The seed, when not given,
is drawn from entropy and always echoed so any run can be reproduced.
"""

from __future__ import annotations

import argparse
import math
import os
import random
import statistics
import subprocess
import sys
import time
import uuid

from . import fitness as fit
from .broker import BrokerServer
from .driver import (
    BrokeredDispatcher,
    LoopbackDispatcher,
    SearchAborted,
    run_random_search,
    run_search,
)
from .evolution import EvolutionConfig, EvolutionError
from .genotype import GenotypeError, parse, serialize
from .nameserver import NameserverServer
from .network import BuildConfig, BuildError, TensorShape, build_plan, describe
from .protocol import ProtocolError, ProtocolTimeouts
from .worker import Worker, WorkerConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class CliConfigError(ValueError):
    pass


class SpawnFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):  # noqa: A003 - argparse API
        raise CliConfigError(message)


def _env(flag: str, fallback=None):
    return os.environ.get("EVONAS_" + flag.replace("-", "_").upper(), fallback)


def _add(parser: _Parser, flag: str, **kwargs) -> None:
    """Add a flag whose default may come from EVONAS_<FLAG>."""
    env_value = _env(flag)
    if env_value is not None:
        kwargs["default"] = (kwargs.get("type", str)(env_value)
                             if kwargs.get("type") else env_value)
    parser.add_argument("--" + flag, **kwargs)


def _parse_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise CliConfigError(f"malformed listen address {text!r}")
    return (host or "127.0.0.1", int(port))


def _parse_shape(text: str) -> TensorShape:
    parts = text.lower().split("x")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise CliConfigError(
            f"malformed input shape {text!r} (expected HxWxC, e.g. 96x96x3)")
    return TensorShape(*(int(p) for p in parts))


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = random.SystemRandom().randrange(2 ** 32)
    print(f"seed: {args.seed}")
    return args.seed


def _timeouts(args) -> ProtocolTimeouts:
    return ProtocolTimeouts(heartbeat_interval_ms=args.heartbeat_ms)


def _write_csv(csv_text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(csv_text)
        print(f"csv written to {path}")
    else:
        sys.stdout.write(csv_text)


def _make_dispatcher(args, eval_cfg=None):
    if getattr(args, "broker", None) or getattr(args, "nameserver", None):
        return BrokeredDispatcher(broker=args.broker,
                                  nameserver=args.nameserver,
                                  timeout_s=args.dispatch_timeout)
    return LoopbackDispatcher()


def _eval_config(args) -> fit.EvalConfig:
    return fit.EvalConfig(evaluator_kind=args.evaluator,
                          target_key=parse(args.target).canonical_key,
                          delay_ms=args.delay_ms)


def _evo_config(args) -> EvolutionConfig:
    return EvolutionConfig(mu=args.mu, max_num_layers=args.max_layers,
                           num_generations=args.generations,
                           rng_seed=args.seed)


# --------------------------------------------------------------- commands

def cmd_nameserver(args) -> int:
    server = NameserverServer(_parse_listen(args.listen), _timeouts(args))
    print(f"nameserver listening on {server.address}")
    server.serve_forever()
    return EXIT_OK


def cmd_broker(args) -> int:
    server = BrokerServer(_parse_listen(args.listen),
                          broker_id=args.broker_id or None,
                          timeouts=_timeouts(args),
                          nameserver=args.nameserver,
                          link_peers=tuple(args.link or ()),
                          share_factor=args.share_factor)
    server.start()
    print(f"broker {server.core.broker_id} listening on {server.address}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


def cmd_worker(args) -> int:
    cfg = WorkerConfig(worker_id=args.worker_id, broker=args.broker,
                       nameserver=args.nameserver, timeouts=_timeouts(args))
    print(f"worker {cfg.worker_id} starting")
    worker = Worker(cfg)
    try:
        worker.run()
    except KeyboardInterrupt:
        worker.stop()
    return EXIT_OK


def _print_best(report) -> None:
    best = report.best
    print(f"best genotype: {best.key}")
    print(f"best fitness: {best.fitness!r}")


def cmd_search(args) -> int:
    _resolve_seed(args)
    evo_cfg = _evo_config(args)
    eval_cfg = _eval_config(args)
    dispatcher = _make_dispatcher(args)
    try:
        report = run_search(evo_cfg, eval_cfg, dispatcher)
    finally:
        dispatcher.close()
    _write_csv(report.to_csv(), args.csv_out)
    print(report.summary())
    plan = build_plan(report.best.genotype,
                      BuildConfig(_parse_shape(args.input_shape),
                                  args.reductions))
    print(describe(plan))
    return EXIT_OK


def cmd_random_search(args) -> int:
    _resolve_seed(args)
    evo_cfg = _evo_config(args)
    eval_cfg = _eval_config(args)
    dispatcher = _make_dispatcher(args)
    try:
        report = run_random_search(args.samples, evo_cfg, eval_cfg, dispatcher)
    finally:
        dispatcher.close()
    _write_csv(report.to_csv(), args.csv_out)
    print(report.summary())
    return EXIT_OK


def cmd_describe(args) -> int:
    genotype = parse(args.genotype)
    plan = build_plan(genotype, BuildConfig(_parse_shape(args.input_shape),
                                            args.reductions))
    print(f"genotype: {serialize(genotype)}")
    print(describe(plan))
    return EXIT_OK


def cmd_selftest(args) -> int:
    args.seed = args.seed if args.seed is not None else 7
    _resolve_seed(args)
    evo_cfg = EvolutionConfig(mu=4, num_generations=5, rng_seed=args.seed)
    report = run_search(evo_cfg, fit.EvalConfig(), LoopbackDispatcher())
    a = report.to_csv()
    b = run_search(evo_cfg, fit.EvalConfig(), LoopbackDispatcher()).to_csv()
    if a != b:
        print("selftest: FAIL (loopback runs not deterministic)")
        return EXIT_RUNTIME
    best = [g.best_fitness for g in report.generations]
    if any(y < x for x, y in zip(best, best[1:])):
        print("selftest: FAIL (best fitness not monotone)")
        return EXIT_RUNTIME
    print("selftest: ok (deterministic loopback search, monotone elitism)")
    return EXIT_OK


# ----------------------------------------------------------- scaling test

def _spawn_workers(count: int, broker_addr: str, heartbeat_ms: int) -> list:
    procs = []
    for i in range(count):
        try:
            procs.append(subprocess.Popen(
                [sys.executable, "-m", "evonas", "worker",
                 "--broker", broker_addr,
                 "--heartbeat-ms", str(heartbeat_ms),
                 "--worker-id", f"scale-w{i}-{uuid.uuid4().hex[:6]}"],
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL))
        except OSError as e:
            for p in procs:
                p.kill()
            raise SpawnFailure(f"cannot spawn worker process: {e}") from e
    return procs


def _new_task(eval_cfg) -> dict:
    return {"task_id": str(uuid.uuid4()), "genotype": "3x3conv2d:8",
            "eval_config": eval_cfg.to_wire()}


def _count_window(dispatcher, eval_cfg, seconds: float) -> int:
    """Count results over a fixed window, topping the backlog back up
    one task per result so workers never starve."""
    deadline = time.monotonic() + seconds
    count = 0
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return count
        if dispatcher.next_result(timeout=min(remaining, 0.05)) is not None:
            dispatcher.submit_tasks([_new_task(eval_cfg)])
            count += 1


def _scaling_round(broker_addr: str, eval_cfg, worker_count: int,
                   generations: int, window_s: float,
                   dispatch_timeout: float) -> float:
    """Geometric mean of tasks evaluated per fixed-duration generation."""
    dispatcher = BrokeredDispatcher(broker=broker_addr,
                                    timeout_s=dispatch_timeout)
    try:
        # Steady backlog so measurement reflects worker capacity, not
        # submission cadence; warmup window lets workers leave backoff.
        dispatcher.submit_tasks(
            [_new_task(eval_cfg) for _ in range(4 * worker_count + 4)])
        _count_window(dispatcher, eval_cfg, window_s)
        counts = [_count_window(dispatcher, eval_cfg, window_s)
                  for _ in range(generations)]
    finally:
        dispatcher.close()
    if any(c == 0 for c in counts):
        raise SpawnFailure(
            f"no results in a {window_s}s window with {worker_count} workers")
    return math.exp(statistics.fmean(math.log(c) for c in counts))


def cmd_scaling_test(args) -> int:
    _resolve_seed(args)
    counts = [int(c) for c in args.workers.split(",") if c]
    if not counts or counts[0] != 1:
        raise CliConfigError("--workers must start with 1 (speedup baseline)")
    timeouts = _timeouts(args)
    eval_cfg = fit.EvalConfig(evaluator_kind="delay", delay_ms=args.delay_ms)
    rows = []
    for count in counts:
        # Fresh broker per worker count so leftover backlog from the
        # previous round cannot leak into this measurement.
        broker = BrokerServer(("127.0.0.1", 0), timeouts=timeouts)
        broker.start()
        procs = _spawn_workers(count, broker.address, args.heartbeat_ms)
        try:
            per_gen = _scaling_round(broker.address, eval_cfg, count,
                                     args.generations, args.window_seconds,
                                     args.dispatch_timeout)
        finally:
            for p in procs:
                p.terminate()
            for p in procs:
                p.wait(timeout=10)
            broker.stop()
        rows.append((count, per_gen / args.window_seconds))
        print(f"workers={count}: {rows[-1][1]:.2f} tasks/s")
    base = rows[0][1]
    csv_lines = ["workers,tasks_per_second,speedup"]
    for count, rate in rows:
        csv_lines.append(f"{count},{rate:.4f},{rate / base:.4f}")
    _write_csv("\n".join(csv_lines) + "\n", args.csv_out)
    return EXIT_OK


# ------------------------------------------------------------------ main

def _add_search_flags(p: _Parser) -> None:
    _add(p, "seed", type=int, default=None,
         help="master RNG seed (default: entropy, echoed)")
    _add(p, "mu", type=int, default=10, help="population size (default 10)")
    _add(p, "generations", type=int, default=20,
         help="number of generations (default 20)")
    _add(p, "max-layers", type=int, default=10,
         help="maximum layers per genotype (default 10)")
    _add(p, "evaluator", default="surrogate", choices=["surrogate", "delay"],
         help="fitness evaluator (default surrogate)")
    _add(p, "target", default="5x5conv2d:64",
         help="surrogate target genotype (default 5x5conv2d:64)")
    _add(p, "delay-ms", type=int, default=0,
         help="sleep per task for the delay evaluator (default 0)")
    _add(p, "csv-out", default=None,
         help="write per-generation CSV here (default: stdout); columns: "
              "generation,population,dispatched,cache_hits,skipped,"
              "best_fitness,mean_fitness,best_genotype,wall_ms")
    _add(p, "broker", default=None, help="dispatch via this broker host:port")
    _add(p, "nameserver", default=None,
         help="discover a broker via this nameserver host:port")
    _add(p, "dispatch-timeout", type=float, default=120.0,
         help="seconds before an unresolved brokered batch aborts (default 120)")
    _add(p, "reductions", type=int, default=2,
         help="reduction modules for the final architecture report (default 2)")
    _add(p, "input-shape", default="96x96x3",
         help="input tensor HxWxC for the final report (default 96x96x3)")


def build_parser() -> _Parser:
    parser = _Parser(prog="evonas",
                     description="Distributed evolutionary architecture "
                                 "search for modular autoencoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nameserver", help="run the broker registry",
                       parents=[], add_help=True)
    _add(p, "listen", default="127.0.0.1:7070",
         help="bind address (default 127.0.0.1:7070)")
    _add(p, "heartbeat-ms", type=int, default=2000,
         help="heartbeat interval in ms (default 2000)")
    p.set_defaults(func=cmd_nameserver)

    p = sub.add_parser("broker", help="run a task broker")
    _add(p, "listen", default="127.0.0.1:7080",
         help="bind address (default 127.0.0.1:7080)")
    _add(p, "heartbeat-ms", type=int, default=2000,
         help="heartbeat interval in ms (default 2000)")
    _add(p, "nameserver", default=None, help="register with this nameserver")
    _add(p, "broker-id", default="", help="stable broker id (default random)")
    _add(p, "share-factor", type=float, default=2.0,
         help="share work with linked peers when the owned queue exceeds "
              "this multiple of local idle workers (default 2.0)")
    p.add_argument("--link", action="append", default=None,
                   metavar="HOST:PORT",
                   help="peer broker to share overflow work with (repeatable)")
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("worker", help="run an evaluation worker")
    _add(p, "broker", default=None, help="broker host:port")
    _add(p, "nameserver", default=None, help="discover brokers here")
    _add(p, "heartbeat-ms", type=int, default=2000,
         help="heartbeat interval in ms (default 2000)")
    _add(p, "worker-id", default="", help="stable worker id (default random)")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("search", help="run the evolutionary search")
    _add_search_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("random-search", help="run the random-search baseline")
    _add_search_flags(p)
    _add(p, "samples", type=int, default=30,
         help="number of random genotypes (default 30); CSV columns: "
              "sample,genotype,fitness")
    p.set_defaults(func=cmd_random_search)

    p = sub.add_parser("describe",
                       help="print the network plan for a genotype")
    p.add_argument("genotype",
                   help="comma-separated layers, e.g. 5x5conv2d:64 "
                        "(table form 64-5x5conv2d also accepted)")
    _add(p, "reductions", type=int, default=2,
         help="reduction modules (default 2)")
    _add(p, "input-shape", default="96x96x3",
         help="input tensor HxWxC (default 96x96x3)")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("scaling-test",
                       help="measure brokered throughput vs worker count")
    _add(p, "seed", type=int, default=None, help="echoed for reproducibility")
    _add(p, "workers", default="1,2,4,8",
         help="comma-separated worker counts, first must be 1 (default 1,2,4,8)")
    _add(p, "delay-ms", type=int, default=200,
         help="per-task delay in ms (default 200)")
    _add(p, "window-seconds", type=float, default=2.5,
         help="duration of one measured generation window (default 2.5)")
    _add(p, "generations", type=int, default=5,
         help="measured generations per worker count (default 5)")
    _add(p, "heartbeat-ms", type=int, default=500,
         help="heartbeat interval in ms (default 500)")
    _add(p, "dispatch-timeout", type=float, default=120.0,
         help="seconds before an unresolved batch aborts (default 120)")
    _add(p, "csv-out", default=None,
         help="write CSV here (default: stdout); columns: "
              "workers,tasks_per_second,speedup")
    p.set_defaults(func=cmd_scaling_test)

    p = sub.add_parser("selftest", help="quick determinism/elitism check")
    _add(p, "seed", type=int, default=None, help="seed (default 7)")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (CliConfigError, GenotypeError, BuildError, EvolutionError,
            fit.EvalError, ProtocolError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SearchAborted, SpawnFailure, ConnectionError, OSError,
            subprocess.SubprocessError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
