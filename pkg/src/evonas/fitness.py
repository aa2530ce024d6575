"""Evaluator contract and the two in-process evaluators.

The surrogate evaluator scores a genotype by its edit distance to a
target architecture, giving a deterministic landscape whose global
optimum is exactly the target.  The delay evaluator wraps the surrogate
with a fixed sleep so scaling and fault experiments have realistic task
durations.  Real training lives in the external trainer worker, which
receives the same eval config over the wire.

Fitness is the reciprocal of loss everywhere in the system.
"""

from __future__ import annotations

import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field, asdict

from .genotype import Genotype, parse

# Floor on loss so fitness stays finite for perfect evaluations.
LOSS_FLOOR = 1e-9

# Surrogate loss offset: caps fitness at 10 for the target itself.
SURROGATE_BASE_LOSS = 0.1

SUBST_SAME_KIND = 0.5
SUBST_DIFF_KIND = 1.0
INDEL_COST = 1.0


class EvalError(ValueError):
    pass


class MalformedTarget(EvalError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation parameters; the digest keys the fitness cache."""

    evaluator_kind: str = "surrogate"  # surrogate | delay | external
    target_key: str = "5x5conv2d:64"
    epochs: int = 2
    delay_ms: int = 0
    noise_sigma2: float = 1.0 / 3.0
    mode: str = "denoise"  # forwarded to the external trainer
    reductions: int = 2    # forwarded to the external trainer

    def __post_init__(self):
        if self.evaluator_kind not in ("surrogate", "delay", "external"):
            raise EvalError(f"unknown evaluator kind {self.evaluator_kind!r}")

    @property
    def config_digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_wire(self) -> dict:
        return asdict(self)

    @classmethod
    def from_wire(cls, obj: dict) -> "EvalConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass(frozen=True)
class FitnessResult:
    task_id: str
    fitness: float
    loss: float
    eval_duration_ms: float = 0.0
    worker_id: str = ""
    error: str | None = None


def fitness_from_loss(loss: float) -> float:
    return 1.0 / max(loss, LOSS_FLOOR)


def module_distance(g: Genotype, t: Genotype) -> float:
    """Edit distance between two layer modules.

    Substitution costs 0 for identical specs, 0.5 for same kind with a
    different filter count, 1.0 for different kinds; insertions and
    deletions cost 1.0.  Standard dynamic program; symmetric in its
    arguments.
    """
    a, b = g.layers, t.layers
    n, m = len(a), len(b)
    prev = [j * INDEL_COST for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [i * INDEL_COST] + [0.0] * m
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                sub = 0.0
            elif a[i - 1].kind == b[j - 1].kind:
                sub = SUBST_SAME_KIND
            else:
                sub = SUBST_DIFF_KIND
            cur[j] = min(
                prev[j - 1] + sub,
                prev[j] + INDEL_COST,
                cur[j - 1] + INDEL_COST,
            )
        prev = cur
    return prev[m]


def surrogate_fitness(g: Genotype, cfg: EvalConfig,
                      task_id: str = "", worker_id: str = "") -> FitnessResult:
    """Deterministic distance-to-target landscape."""
    try:
        target = parse(cfg.target_key)
    except ValueError as e:
        raise MalformedTarget(f"bad surrogate target {cfg.target_key!r}: {e}") from e
    loss = SURROGATE_BASE_LOSS + module_distance(g, target)
    return FitnessResult(
        task_id=task_id or str(uuid.uuid4()),
        fitness=fitness_from_loss(loss),
        loss=loss,
        worker_id=worker_id,
    )


def delay_evaluate(g: Genotype, cfg: EvalConfig,
                   task_id: str = "", worker_id: str = "") -> FitnessResult:
    """Surrogate fitness after a fixed sleep of cfg.delay_ms."""
    start = time.monotonic()
    if cfg.delay_ms > 0:
        time.sleep(cfg.delay_ms / 1000.0)
    result = surrogate_fitness(g, cfg, task_id, worker_id)
    elapsed = (time.monotonic() - start) * 1000.0
    return FitnessResult(
        task_id=result.task_id,
        fitness=result.fitness,
        loss=result.loss,
        eval_duration_ms=elapsed,
        worker_id=worker_id,
    )


def evaluate(g: Genotype, cfg: EvalConfig,
             task_id: str = "", worker_id: str = "") -> FitnessResult:
    """Dispatch to the evaluator named by cfg.evaluator_kind."""
    if cfg.evaluator_kind == "surrogate":
        return surrogate_fitness(g, cfg, task_id, worker_id)
    if cfg.evaluator_kind == "delay":
        return delay_evaluate(g, cfg, task_id, worker_id)
    raise EvalError(
        f"evaluator kind {cfg.evaluator_kind!r} is not runnable in-process"
    )
