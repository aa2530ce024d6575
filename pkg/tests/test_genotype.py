import math
import random

import pytest

from evonas import genotype as gt
from evonas.genotype import (
    CATALOG,
    Genotype,
    LayerKind,
    LayerSpec,
    SearchSpaceConfig,
    parse,
    random_genotype,
    random_layer,
    search_space_size,
    serialize,
)

from oracles import all_genotypes_up_to_two


def test_catalog_has_exactly_17_options():
    assert len(CATALOG) == 17
    assert len(set(CATALOG)) == 17
    convs = [s for s in CATALOG if s.kind.is_conv]
    assert len(convs) == 16
    assert sum(1 for s in CATALOG if s.kind is LayerKind.DROPOUT2D) == 1


def test_parse_paper_example():
    g = parse("5x5conv2d:16,3x3conv2d:32,3x3conv2d:32")
    assert len(g) == 3
    assert g.layers[0] == LayerSpec(LayerKind.CONV5X5, 16)
    assert g.layers[1] == LayerSpec(LayerKind.CONV3X3, 32)
    assert g.layers[2] == LayerSpec(LayerKind.CONV3X3, 32)


def test_parse_dropout_bare_token():
    g = parse("dropout2d")
    assert g.layers == (LayerSpec(LayerKind.DROPOUT2D),)


def test_parse_table_alias():
    assert parse("64-5x5conv2d").canonical_key == "5x5conv2d:64"
    assert parse("16-3x3conv2d,dropout2d").canonical_key == "3x3conv2d:16,dropout2d"


@pytest.mark.parametrize(
    "text,err",
    [
        ("9x9conv2d:16", gt.UnknownLayerToken),
        ("3x3conv2d:12", gt.IllegalFilterCount),
        ("", gt.EmptyModule),
        ("3x3conv2d", gt.MalformedToken),
        ("3x3conv2d:8:8", gt.MalformedToken),
        ("3x3conv2d:eight", gt.MalformedToken),
        ("3x3conv2d:8,,3x3conv2d:8", gt.MalformedToken),
        (",".join(["dropout2d"] * 11), gt.TooManyLayers),
        ("dropout2d:8", gt.IllegalFilterCount),
    ],
)
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse(text)


def test_serialize_examples():
    g = Genotype((LayerSpec(LayerKind.CONV5X5, 16), LayerSpec(LayerKind.CONV3X3, 32)))
    assert serialize(g) == "5x5conv2d:16,3x3conv2d:32"
    g2 = Genotype((LayerSpec(LayerKind.DROPOUT2D), LayerSpec(LayerKind.CONV1X1, 8)))
    assert serialize(g2) == "dropout2d,1x1conv2d:8"


def test_roundtrip_all_306_short_genotypes():
    for g in all_genotypes_up_to_two():
        assert parse(serialize(g)) == g
        assert serialize(parse(g.canonical_key)) == g.canonical_key


def test_roundtrip_property_10000_cases():
    rng = random.Random(1234)
    for _ in range(10_000):
        g = random_genotype(rng)
        s = serialize(g)
        g2 = parse(s)
        assert g2 == g
        assert serialize(g2) == s


def test_genotype_immutable():
    g = parse("3x3conv2d:8")
    with pytest.raises(Exception):
        g.layers = ()
    key_before = g.canonical_key
    # Mutating operations elsewhere never touch this instance.
    assert g.canonical_key == key_before
    assert isinstance(g.layers, tuple)


def test_equality_is_structural():
    assert parse("3x3conv2d:8") == parse("3x3conv2d:8")
    assert parse("3x3conv2d:8") != parse("3x3conv2d:16")
    assert hash(parse("dropout2d")) == hash(parse("dropout2d"))


def test_empty_genotype_rejected():
    with pytest.raises(gt.EmptyModule):
        Genotype(())


def test_random_layer_uniform_within_5_sigma():
    rng = random.Random(42)
    n = 17_000
    counts = {}
    for _ in range(n):
        spec = random_layer(rng)
        counts[spec] = counts.get(spec, 0) + 1
    assert len(counts) == 17
    p = 1 / 17
    sigma = math.sqrt(n * p * (1 - p))
    for spec, c in counts.items():
        assert abs(c - n * p) <= 5 * sigma, (spec, c)


def test_random_layer_deterministic_given_seed():
    a = random.Random(7)
    b = random.Random(7)
    assert [random_layer(a) for _ in range(100)] == [random_layer(b) for _ in range(100)]


def test_random_genotype_degenerate_range():
    rng = random.Random(0)
    cfg = SearchSpaceConfig(max_num_layers=1)
    for _ in range(50):
        assert len(random_genotype(rng, cfg)) == 1


def test_random_genotype_lengths_uniform():
    rng = random.Random(99)
    n = 10_000
    counts = [0] * 10
    for _ in range(n):
        counts[len(random_genotype(rng)) - 1] += 1
    p = 0.1
    sigma = math.sqrt(n * p * (1 - p))
    for c in counts:
        assert abs(c - n * p) <= 5 * sigma


def test_search_space_size():
    assert search_space_size(SearchSpaceConfig(1)) == 17
    assert search_space_size(0) == 0
    # Closed form (17^11 - 17) / 16 evaluated independently.
    assert search_space_size(SearchSpaceConfig(10)) == (17 ** 11 - 17) // 16
    assert search_space_size(SearchSpaceConfig(10)) == 2_141_993_519_226


def test_max_encoded_length_enforced():
    with pytest.raises(gt.TooManyLayers):
        parse("dropout2d," * 40 + "dropout2d")
