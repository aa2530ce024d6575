"""Search driver: runs the generational search end to end, dispatching
evaluation batches either in-process (loopback) or through a broker,
ingesting results, updating the fitness cache, and selecting survivors.

Each generation draws from its own derived random stream, so identical
(seed, config, evaluator) always produce the identical population
sequence no matter how results are scheduled across workers.  Loopback
runs report wall_ms = 0 so same-seed CSV output is byte-identical.
"""

from __future__ import annotations

import io
import logging
import queue
import statistics
import threading
import time
import uuid
from dataclasses import dataclass, field

from . import fitness as fit
from .broker import close_socket, connect
from .evolution import (
    EvolutionConfig,
    FitnessCache,
    Individual,
    Population,
    apply_result,
    generation_rng,
    initial_population,
    mutate_population,
    plan_evaluations,
    select,
)
from .genotype import parse, random_genotype
from .protocol import recv_message, send_message

logger = logging.getLogger(__name__)

CSV_HEADER = ("generation,population,dispatched,cache_hits,skipped,"
              "best_fitness,mean_fitness,best_genotype,wall_ms")


class DispatchTimeout(RuntimeError):
    pass


class SearchAborted(RuntimeError):
    def __init__(self, message: str, partial_report: "SearchReport"):
        super().__init__(message)
        self.partial_report = partial_report


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    population_size: int
    dispatched: int
    cache_hits: int
    skipped_evaluated: int
    duplicate_resolutions: int
    best_fitness: float
    mean_fitness: float
    best_genotype_key: str
    wall_ms: int

    def csv_row(self) -> str:
        return (f"{self.generation},{self.population_size},{self.dispatched},"
                f"{self.cache_hits},{self.skipped_evaluated},"
                f"{self.best_fitness!r},{self.mean_fitness!r},"
                f"{self.best_genotype_key},{self.wall_ms}")


@dataclass
class SearchReport:
    seed: int
    generations: list[GenerationStats] = field(default_factory=list)
    final_population: Population | None = None
    best: Individual | None = None
    cache_hits: int = 0
    cache_misses: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for g in self.generations:
            out.write(g.csv_row() + "\n")
        return out.getvalue()

    def summary(self) -> str:
        lines = [f"seed: {self.seed}",
                 f"generations: {len(self.generations)}"]
        if self.best is not None:
            lines.append(f"best_genotype: {self.best.key}")
            lines.append(f"best_fitness: {self.best.fitness!r}")
        lines.append(f"cache: {self.cache_hits} hits / {self.cache_misses} misses")
        return "\n".join(lines)


@dataclass
class RandomSearchReport:
    seed: int
    samples: list[tuple[str, float]] = field(default_factory=list)

    @property
    def best_fitness(self) -> float:
        return max(f for _, f in self.samples)

    @property
    def mean_fitness(self) -> float:
        return statistics.fmean(f for _, f in self.samples)

    @property
    def stddev_fitness(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return statistics.stdev(f for _, f in self.samples)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("sample,genotype,fitness\n")
        for i, (key, fitness) in enumerate(self.samples):
            out.write(f"{i},{key},{fitness!r}\n")
        return out.getvalue()

    def summary(self) -> str:
        return "\n".join([
            f"seed: {self.seed}",
            f"samples: {len(self.samples)}",
            f"best_fitness: {self.best_fitness!r}",
            f"mean_fitness: {self.mean_fitness!r}",
            f"stddev_fitness: {self.stddev_fitness!r}",
        ])


# ------------------------------------------------------------- dispatchers

class LoopbackDispatcher:
    """Evaluates tasks inline; fully deterministic, no wall-time semantics."""

    measures_wall_time = False

    def dispatch(self, tasks: list[dict]) -> dict[str, dict]:
        results = {}
        for task in tasks:
            try:
                genotype = parse(task["genotype"])
                cfg = fit.EvalConfig.from_wire(task["eval_config"])
                r = fit.evaluate(genotype, cfg, task_id=task["task_id"])
                results[task["task_id"]] = {
                    "fitness": r.fitness, "loss": r.loss}
            except Exception as e:  # noqa: BLE001 - mirror the worker contract
                results[task["task_id"]] = {
                    "fitness": 0.0, "loss": float(2 ** 63),
                    "error": f"{type(e).__name__}: {e}"}
        return results

    def close(self) -> None:
        pass


class BrokeredDispatcher:
    """Submits tasks to a broker over the wire and awaits results.

    If the broker connection drops mid-batch, the dispatcher reconnects
    and resubmits the unresolved tasks once (submission is idempotent on
    task_id); a batch unresolved past the ceiling raises DispatchTimeout.
    """

    measures_wall_time = True

    def __init__(self, broker: str | None = None, nameserver: str | None = None,
                 timeout_s: float = 120.0, sender_id: str = ""):
        if (broker is None) == (nameserver is None):
            raise ValueError("exactly one of broker or nameserver must be given")
        self.broker = broker
        self.nameserver = nameserver
        self.timeout_s = timeout_s
        self.sender_id = sender_id or f"model-{uuid.uuid4().hex[:8]}"
        self._sock = None
        self._send_lock = threading.Lock()
        self._results: queue.Queue = queue.Queue()

    def _discover(self) -> str:
        if self.broker:
            return self.broker
        with connect(self.nameserver, timeout=5.0) as sock:
            sock.settimeout(5.0)
            send_message(sock, {"type": "broker_list_request",
                                "sender_id": self.sender_id, "role": "model"})
            reply = recv_message(sock)
        if not reply or reply["type"] != "broker_list" or not reply["brokers"]:
            raise ConnectionError("nameserver returned no live brokers")
        return reply["brokers"][0]["address"]

    def _ensure_connected(self) -> None:
        if self._sock is not None:
            return
        address = self._discover()
        self._sock = connect(address)
        sock = self._sock

        def read_loop() -> None:
            try:
                while True:
                    msg = recv_message(sock)
                    if msg is None:
                        break
                    if msg["type"] == "task_result":
                        self._results.put(msg)
            except (ConnectionError, OSError, ValueError) as e:
                logger.debug("model %s: read loop ended: %s", self.sender_id, e)
            finally:
                self._results.put(None)

        threading.Thread(target=read_loop, daemon=True,
                         name=f"{self.sender_id}-read").start()

    def _send(self, msg: dict) -> None:
        with self._send_lock:
            send_message(self._sock, msg)

    def _drop_connection(self) -> None:
        if self._sock is not None:
            close_socket(self._sock)
            self._sock = None

    def _submit(self, tasks: list[dict]) -> None:
        for task in tasks:
            self._send({
                "type": "submit_task",
                "task_id": task["task_id"],
                "genotype": task["genotype"],
                "eval_config": task["eval_config"],
                "sender_id": self.sender_id,
            })

    def dispatch(self, tasks: list[dict]) -> dict[str, dict]:
        pending = {t["task_id"]: t for t in tasks}
        results: dict[str, dict] = {}
        if not pending:
            return results
        deadline = time.monotonic() + self.timeout_s
        resubmits_left = 1
        self._ensure_connected()
        self._submit(tasks)
        while pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DispatchTimeout(
                    f"{len(pending)} tasks unresolved after {self.timeout_s}s")
            try:
                msg = self._results.get(timeout=min(remaining, 1.0))
            except queue.Empty:
                continue
            if msg is None:
                # Connection lost; brokers are stateless across restarts,
                # so resubmit everything still unresolved.
                self._drop_connection()
                if resubmits_left <= 0:
                    raise DispatchTimeout(
                        "broker connection lost and resubmit already used")
                resubmits_left -= 1
                self._retry_connect(deadline)
                self._submit(list(pending.values()))
                continue
            task_id = msg["task_id"]
            if task_id in pending:
                del pending[task_id]
                results[task_id] = msg
        return results

    def submit_tasks(self, tasks: list[dict]) -> None:
        """Fire-and-forget submission for streaming (non-batch) use."""
        self._ensure_connected()
        self._submit(tasks)

    def next_result(self, timeout: float) -> dict | None:
        """Next task_result within timeout, or None if none arrived."""
        try:
            msg = self._results.get(timeout=timeout)
        except queue.Empty:
            return None
        if msg is None:
            self._drop_connection()
            raise ConnectionError("broker connection lost")
        return msg

    def _retry_connect(self, deadline: float) -> None:
        delay = 0.1
        while True:
            try:
                self._ensure_connected()
                return
            except (ConnectionError, OSError) as e:
                if time.monotonic() + delay > deadline:
                    raise DispatchTimeout(f"cannot reach a broker: {e}") from e
                time.sleep(delay)
                delay = min(delay * 2, 2.0)

    def close(self) -> None:
        self._drop_connection()


# ------------------------------------------------------------------ search

def _evaluate_generation(pop: Population, cache: FitnessCache,
                         eval_cfg: fit.EvalConfig, dispatcher) -> tuple:
    """Plan, dispatch, and ingest one population's evaluations."""
    digest = eval_cfg.config_digest
    plan = plan_evaluations(pop, cache, digest)
    tasks = [{"task_id": str(uuid.uuid4()), "genotype": key,
              "eval_config": eval_cfg.to_wire()} for key in plan.to_dispatch]
    key_by_id = {t["task_id"]: t["genotype"] for t in tasks}
    results = dispatcher.dispatch(tasks)
    for task_id, msg in results.items():
        key = key_by_id[task_id]
        errored = bool(msg.get("error"))
        fitness = 0.0 if errored else msg["fitness"]
        apply_result(plan, key, fitness, errored=errored)
        if not errored:
            cache.insert(key, digest, msg["fitness"], msg["loss"])
    missing = [k for k, idxs in plan.indices_by_key.items()
               if not plan.members[idxs[0]].evaluated]
    if missing:
        raise DispatchTimeout(f"no results for {len(missing)} tasks")
    return plan, Population(plan.members, pop.generation)


def _gen_stats(generation: int, expanded_size: int, plan, survivors: Population,
               wall_ms: int) -> GenerationStats:
    best = max(survivors.members, key=lambda m: m.fitness)
    mean = statistics.fmean(m.fitness for m in survivors.members)
    return GenerationStats(
        generation=generation,
        population_size=expanded_size,
        dispatched=len(plan.to_dispatch),
        cache_hits=plan.cache_hits,
        skipped_evaluated=plan.skipped_evaluated,
        duplicate_resolutions=plan.duplicate_resolutions,
        best_fitness=best.fitness,
        mean_fitness=mean,
        best_genotype_key=best.key,
        wall_ms=wall_ms,
    )


def run_search(evo_cfg: EvolutionConfig, eval_cfg: fit.EvalConfig,
               dispatcher) -> SearchReport:
    """Full generational search; deterministic for a given seed."""
    cache = FitnessCache()
    report = SearchReport(seed=evo_cfg.rng_seed)
    pop = initial_population(evo_cfg)
    try:
        for gen in range(1, evo_cfg.num_generations + 1):
            start = time.monotonic()
            rng = generation_rng(evo_cfg.rng_seed, gen)
            expanded = mutate_population(pop, rng, evo_cfg)
            plan, evaluated = _evaluate_generation(
                expanded, cache, eval_cfg, dispatcher)
            pop = select(evaluated, evo_cfg.mu)
            wall_ms = (int((time.monotonic() - start) * 1000)
                       if dispatcher.measures_wall_time else 0)
            report.generations.append(
                _gen_stats(gen, len(expanded), plan, pop, wall_ms))
    except DispatchTimeout as e:
        report.final_population = pop
        report.cache_hits, report.cache_misses = cache.hits, cache.misses
        raise SearchAborted(str(e), report) from e
    report.final_population = pop
    report.best = max(pop.members, key=lambda m: m.fitness)
    report.cache_hits, report.cache_misses = cache.hits, cache.misses
    return report


def run_random_search(n_samples: int, evo_cfg: EvolutionConfig,
                      eval_cfg: fit.EvalConfig, dispatcher) -> RandomSearchReport:
    """Baseline: n independent uniformly random modules, evaluated once
    per distinct genotype (duplicates filled from the cache)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = generation_rng(evo_cfg.rng_seed, -1)
    space = evo_cfg.search_space
    members = [Individual(random_genotype(rng, space))
               for _ in range(n_samples)]
    cache = FitnessCache()
    try:
        _, evaluated = _evaluate_generation(
            Population(members), cache, eval_cfg, dispatcher)
    except DispatchTimeout as e:
        raise SearchAborted(str(e), SearchReport(seed=evo_cfg.rng_seed)) from e
    report = RandomSearchReport(seed=evo_cfg.rng_seed)
    report.samples = [(m.key, m.fitness) for m in evaluated.members]
    return report
