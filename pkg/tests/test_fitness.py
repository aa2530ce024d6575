import random
import time

import pytest

from evonas.fitness import (
    EvalConfig,
    MalformedTarget,
    SURROGATE_BASE_LOSS,
    delay_evaluate,
    evaluate,
    fitness_from_loss,
    module_distance,
    surrogate_fitness,
)
from evonas.genotype import parse, random_genotype

from oracles import alignment_distance, all_genotypes_up_to_two


def test_distance_identity():
    rng = random.Random(3)
    for _ in range(100):
        g = random_genotype(rng)
        assert module_distance(g, g) == 0.0


def test_distance_filter_substitution():
    assert module_distance(parse("5x5conv2d:64"), parse("5x5conv2d:32")) == 0.5


def test_distance_kind_substitution():
    assert module_distance(parse("5x5conv2d:64"), parse("3x3conv2d:64")) == 1.0


def test_distance_insertion():
    assert module_distance(
        parse("3x3conv2d:8"), parse("5x5conv2d:64,3x3conv2d:8")
    ) == 1.0


def test_distance_matches_alignment_oracle_1000_pairs():
    rng = random.Random(2024)
    for _ in range(1000):
        a = random_genotype(rng)
        b = random_genotype(rng)
        assert module_distance(a, b) == alignment_distance(a, b)


def test_distance_metric_properties():
    rng = random.Random(77)
    pool = [random_genotype(rng) for _ in range(30)]
    for _ in range(300):
        a, b, c = rng.choice(pool), rng.choice(pool), rng.choice(pool)
        dab = module_distance(a, b)
        assert dab >= 0
        assert dab == module_distance(b, a)
        assert (dab == 0) == (a == b)
        assert dab <= module_distance(a, c) + module_distance(c, b) + 1e-12


def test_surrogate_at_target():
    cfg = EvalConfig(evaluator_kind="surrogate", target_key="5x5conv2d:64")
    r = surrogate_fitness(parse("5x5conv2d:64"), cfg)
    assert r.fitness == pytest.approx(10.0)
    assert r.loss == pytest.approx(0.1)


def test_surrogate_half_step():
    cfg = EvalConfig(target_key="5x5conv2d:64")
    r = surrogate_fitness(parse("5x5conv2d:32"), cfg)
    assert r.fitness == pytest.approx(1 / 0.6)


def test_surrogate_deterministic():
    cfg = EvalConfig(target_key="3x3conv2d:8,dropout2d")
    g = parse("7x7conv2d:16")
    assert surrogate_fitness(g, cfg).fitness == surrogate_fitness(g, cfg).fitness


def test_surrogate_global_optimum_is_target():
    cfg = EvalConfig(target_key="5x5conv2d:64")
    target = parse(cfg.target_key)
    best = None
    for g in all_genotypes_up_to_two():
        r = surrogate_fitness(g, cfg)
        if g == target:
            assert r.loss == pytest.approx(SURROGATE_BASE_LOSS)
        else:
            assert r.loss > SURROGATE_BASE_LOSS
        best = max(best or 0.0, r.fitness)
    assert best == pytest.approx(10.0)


def test_surrogate_malformed_target():
    cfg = EvalConfig(target_key="9x9conv2d:64")
    with pytest.raises(MalformedTarget):
        surrogate_fitness(parse("dropout2d"), cfg)


def test_delay_zero_equals_surrogate():
    cfg = EvalConfig(evaluator_kind="delay", delay_ms=0)
    g = parse("3x3conv2d:8")
    d = delay_evaluate(g, cfg, task_id="t")
    s = surrogate_fitness(g, cfg, task_id="t")
    assert (d.fitness, d.loss) == (s.fitness, s.loss)


def test_delay_duration_measured():
    cfg = EvalConfig(evaluator_kind="delay", delay_ms=150)
    start = time.monotonic()
    r = delay_evaluate(parse("3x3conv2d:8"), cfg)
    elapsed_ms = (time.monotonic() - start) * 1000
    assert r.eval_duration_ms >= 150
    assert elapsed_ms >= 150


def test_delay_fitness_independent_of_delay():
    g = parse("1x1conv2d:8")
    f0 = delay_evaluate(g, EvalConfig(evaluator_kind="delay", delay_ms=0)).fitness
    f1 = delay_evaluate(g, EvalConfig(evaluator_kind="delay", delay_ms=20)).fitness
    assert f0 == f1


def test_config_digest_semantics():
    a = EvalConfig(target_key="5x5conv2d:64")
    b = EvalConfig(target_key="5x5conv2d:64")
    c = EvalConfig(target_key="3x3conv2d:8")
    assert a.config_digest == b.config_digest
    assert a.config_digest != c.config_digest
    assert a.config_digest != EvalConfig(target_key="5x5conv2d:64", epochs=5).config_digest


def test_eval_config_wire_roundtrip_ignores_unknown_fields():
    cfg = EvalConfig(evaluator_kind="delay", delay_ms=7)
    wire = cfg.to_wire()
    wire["future_field"] = 123
    assert EvalConfig.from_wire(wire) == cfg


def test_fitness_loss_floor():
    assert fitness_from_loss(0.0) == pytest.approx(1e9)


def test_evaluate_dispatches_by_kind():
    g = parse("5x5conv2d:64")
    assert evaluate(g, EvalConfig()).fitness == pytest.approx(10.0)
    assert evaluate(g, EvalConfig(evaluator_kind="delay")).fitness == pytest.approx(10.0)
