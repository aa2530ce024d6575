"""Population evolution: mutation, crossover, (mu + lambda) selection,
and the two evaluation-avoidance optimizations (evaluated flag and
fitness cache).

Genotypes are immutable; every variation operator returns a new value.
One master seed drives the run; each generation gets its own derived
random stream so worker completion order can never perturb evolution
randomness.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .genotype import (
    Genotype,
    SearchSpaceConfig,
    random_layer,
)


class EvolutionError(ValueError):
    pass


class UnevaluatedIndividual(EvolutionError):
    pass


class CacheConflict(EvolutionError):
    pass


@dataclass(frozen=True)
class Individual:
    genotype: Genotype
    fitness: float | None = None
    evaluated: bool = False
    birth_generation: int = 0
    errored: bool = False

    def __post_init__(self):
        if self.evaluated != (self.fitness is not None):
            raise EvolutionError("evaluated flag must match fitness presence")
        if self.fitness is not None and self.fitness < 0:
            raise EvolutionError("fitness must be non-negative")

    def with_fitness(self, fitness: float, errored: bool = False) -> "Individual":
        return replace(self, fitness=fitness, evaluated=True, errored=errored)

    @property
    def key(self) -> str:
        return self.genotype.canonical_key


@dataclass
class Population:
    members: list[Individual]
    generation: int = 0

    def __post_init__(self):
        if not self.members:
            raise EvolutionError("population must be non-empty")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


class FitnessCache:
    """Insert-once map from (genotype key, eval-config digest) to fitness."""

    def __init__(self):
        self._entries: dict[tuple[str, str], tuple[float, float]] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._entries

    def lookup(self, genotype_key: str, digest: str) -> tuple[float, float] | None:
        entry = self._entries.get((genotype_key, digest))
        if entry is None:
            self.misses += 1
        else:
            self.hits += 1
        return entry

    def insert(self, genotype_key: str, digest: str, fitness: float, loss: float):
        key = (genotype_key, digest)
        existing = self._entries.get(key)
        if existing is not None:
            if existing != (fitness, loss):
                raise CacheConflict(
                    f"cache entry for {key} already holds {existing}, "
                    f"refusing to overwrite with {(fitness, loss)}"
                )
            return
        self._entries[key] = (fitness, loss)


@dataclass(frozen=True)
class EvolutionConfig:
    mu: int = 10
    max_num_layers: int = 10
    num_generations: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        if self.mu < 2:
            raise EvolutionError("mu must be >= 2 (crossover needs a partner)")
        if self.num_generations < 1:
            raise EvolutionError("num_generations must be >= 1")

    @property
    def search_space(self) -> SearchSpaceConfig:
        return SearchSpaceConfig(self.max_num_layers)


def generation_rng(seed: int, generation: int) -> random.Random:
    """Derived stream for one generation: Random(f"{seed}:gen:{g}")."""
    return random.Random(f"{seed}:gen:{generation}")


def initial_population(cfg: EvolutionConfig) -> Population:
    """mu independent single-layer genotypes (minimal layer modules)."""
    rng = random.Random(f"{cfg.rng_seed}:init")
    members = [
        Individual(Genotype((random_layer(rng),))) for _ in range(cfg.mu)
    ]
    return Population(members, generation=0)


def mutate_genotype(g: Genotype, rng: random.Random,
                    max_num_layers: int = 10) -> Genotype:
    """Clone-then-edit: append a random layer (if room and z < 0.5) or
    replace a uniformly chosen position with a uniform draw (which may
    equal the old layer)."""
    layers = list(g.layers)
    z = rng.random()
    if len(layers) < max_num_layers and z < 0.5:
        layers.append(random_layer(rng))
    else:
        layers[rng.randrange(len(layers))] = random_layer(rng)
    return Genotype(tuple(layers))


def crossover(g1: Genotype, g2: Genotype, rng: random.Random,
              max_num_layers: int = 10) -> Genotype:
    """Splice g1's prefix onto g2's suffix, truncated to the size limit.

    Cut indices: i1 uniform on 1..|g1|, i2 uniform on 0..|g2|-1, so the
    child is never empty.
    """
    i1 = rng.randint(1, len(g1))
    i2 = rng.randrange(len(g2))
    child = (g1.layers[:i1] + g2.layers[i2:])[:max_num_layers]
    return Genotype(child)


def mutate_population(pop: Population, rng: random.Random,
                      cfg: EvolutionConfig) -> Population:
    """One generation of variation.

    For each parent p: sample a partner o from the generation-start
    membership, independently mutate each with probability 0.5, always
    add their crossover child, and add the mutated copies only if the
    mutation fired.  Offspring alone can number up to 3x the parent
    population, so the returned population holds at most 4x the parents.
    """
    if len(pop) < 2:
        raise EvolutionError("mutate_population needs at least 2 members")
    parents = list(pop.members)
    next_gen = pop.generation + 1
    out = list(parents)

    def fresh(genotype: Genotype) -> Individual:
        return Individual(genotype, birth_generation=next_gen)

    for idx, p in enumerate(parents):
        partner_idx = rng.randrange(len(parents) - 1)
        if partner_idx >= idx:
            partner_idx += 1
        o = parents[partner_idx]
        u1 = rng.random()
        u2 = rng.random()
        p_geno, o_geno = p.genotype, o.genotype
        p_mutated = o_mutated = False
        if u1 < 0.5:
            p_geno = mutate_genotype(p_geno, rng, cfg.max_num_layers)
            p_mutated = True
        if u2 < 0.5:
            o_geno = mutate_genotype(o_geno, rng, cfg.max_num_layers)
            o_mutated = True
        child = crossover(p_geno, o_geno, rng, cfg.max_num_layers)
        if p_mutated:
            out.append(fresh(p_geno))
        if o_mutated:
            out.append(fresh(o_geno))
        out.append(fresh(child))

    return Population(out, generation=next_gen)


def _selection_key(ind: Individual):
    # Fitness descending; ties broken by fewer layers, then key.
    return (-ind.fitness, len(ind.genotype), ind.key)


def select(pop: Population, mu: int) -> Population:
    """Keep the top mu by fitness ((mu + lambda) selection)."""
    for ind in pop:
        if not ind.evaluated:
            raise UnevaluatedIndividual(
                f"cannot select over unevaluated individual {ind.key}"
            )
    if len(pop) < mu:
        raise EvolutionError(f"population of {len(pop)} cannot fill mu={mu}")
    survivors = sorted(pop.members, key=_selection_key)[:mu]
    return Population(survivors, generation=pop.generation)


@dataclass
class EvaluationPlan:
    """Outcome of the pre-dispatch pass over a population.

    to_dispatch holds one (genotype key) per unique uncached genotype;
    indices_by_key maps each dispatched key to every member index that
    will be filled by its result.
    """

    members: list[Individual]
    to_dispatch: list[str] = field(default_factory=list)
    indices_by_key: dict[str, list[int]] = field(default_factory=dict)
    skipped_evaluated: int = 0
    cache_hits: int = 0
    duplicate_resolutions: int = 0


def plan_evaluations(pop: Population, cache: FitnessCache,
                     digest: str) -> EvaluationPlan:
    """Resolve what actually needs evaluating.

    Already-evaluated members are skipped; unevaluated members with a
    cached key are filled from the cache without dispatch; duplicate
    genotypes within the population dispatch at most once.
    """
    plan = EvaluationPlan(members=list(pop.members))
    for i, ind in enumerate(plan.members):
        if ind.evaluated:
            plan.skipped_evaluated += 1
            continue
        cached = cache.lookup(ind.key, digest)
        if cached is not None:
            plan.members[i] = ind.with_fitness(cached[0])
            plan.cache_hits += 1
            continue
        if ind.key in plan.indices_by_key:
            plan.indices_by_key[ind.key].append(i)
            plan.duplicate_resolutions += 1
        else:
            plan.indices_by_key[ind.key] = [i]
            plan.to_dispatch.append(ind.key)
    return plan


def apply_result(plan: EvaluationPlan, genotype_key: str, fitness: float,
                 errored: bool = False) -> None:
    """Fill every member waiting on genotype_key with the fitness."""
    for i in plan.indices_by_key[genotype_key]:
        plan.members[i] = plan.members[i].with_fitness(fitness, errored=errored)
