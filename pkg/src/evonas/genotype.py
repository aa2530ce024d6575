"""Layer catalog and the immutable genotype encoding of a layer module.

A genotype is an ordered list of layer specs encoded as a comma-separated
string, e.g. ``5x5conv2d:16,3x3conv2d:32,3x3conv2d:32``.  Convolutional
tokens carry a filter count after a colon; the dropout layer is the bare
token ``dropout2d``.  The canonical string is the wire and file
representation of a genotype everywhere in the system (task payloads,
cache keys, CSV reports).
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

FILTER_COUNTS = (8, 16, 32, 64)
CONV_KERNELS = (1, 3, 5, 7)
DROPOUT_P = 0.5
DEFAULT_MAX_NUM_LAYERS = 10

# 10 layers of at most "7x7conv2d:64," is well under this bound.
MAX_ENCODED_LENGTH = 160


class GenotypeError(ValueError):
    """Base class for genotype encoding errors."""


class UnknownLayerToken(GenotypeError):
    pass


class IllegalFilterCount(GenotypeError):
    pass


class EmptyModule(GenotypeError):
    pass


class TooManyLayers(GenotypeError):
    pass


class MalformedToken(GenotypeError):
    pass


class LayerKind(enum.Enum):
    CONV1X1 = "1x1conv2d"
    CONV3X3 = "3x3conv2d"
    CONV5X5 = "5x5conv2d"
    CONV7X7 = "7x7conv2d"
    DROPOUT2D = "dropout2d"

    @property
    def is_conv(self) -> bool:
        return self is not LayerKind.DROPOUT2D

    @property
    def kernel_size(self) -> int:
        if not self.is_conv:
            raise ValueError("dropout layers have no kernel size")
        return int(self.value[0])


@dataclass(frozen=True)
class LayerSpec:
    """A single catalog entry: a layer kind plus filter count for convs."""

    kind: LayerKind
    filters: int | None = None

    def __post_init__(self):
        if self.kind.is_conv:
            if self.filters not in FILTER_COUNTS:
                raise IllegalFilterCount(
                    f"filter count must be one of {FILTER_COUNTS}, got {self.filters}"
                )
        elif self.filters is not None:
            raise IllegalFilterCount("dropout layers carry no filter count")

    @property
    def token(self) -> str:
        if self.kind.is_conv:
            return f"{self.kind.value}:{self.filters}"
        return self.kind.value


def layer_catalog() -> tuple[LayerSpec, ...]:
    """All 17 distinct layer specs: 4 conv kinds x 4 filter counts + dropout."""
    specs = [
        LayerSpec(kind, f)
        for kind in LayerKind
        if kind.is_conv
        for f in FILTER_COUNTS
    ]
    specs.append(LayerSpec(LayerKind.DROPOUT2D))
    return tuple(specs)


CATALOG = layer_catalog()


@dataclass(frozen=True)
class SearchSpaceConfig:
    max_num_layers: int = DEFAULT_MAX_NUM_LAYERS

    def __post_init__(self):
        if self.max_num_layers < 1:
            raise ValueError("max_num_layers must be >= 1")


@dataclass(frozen=True)
class Genotype:
    """Immutable encoded layer module, the unit of evolution.

    Mutation and crossover never modify a genotype in place; they build
    new values from copies of the layer tuple.
    """

    layers: tuple[LayerSpec, ...]
    canonical_key: str = field(init=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.layers, tuple):
            object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) == 0:
            raise EmptyModule("a genotype must contain at least one layer")
        object.__setattr__(
            self, "canonical_key", ",".join(l.token for l in self.layers)
        )

    def __len__(self) -> int:
        return len(self.layers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Genotype):
            return NotImplemented
        return self.canonical_key == other.canonical_key

    def __hash__(self) -> int:
        return hash(self.canonical_key)

    def __str__(self) -> str:
        return self.canonical_key


def _parse_token(token: str) -> LayerSpec:
    if token == LayerKind.DROPOUT2D.value:
        return LayerSpec(LayerKind.DROPOUT2D)
    if ":" not in token:
        if any(token == k.value for k in LayerKind):
            raise MalformedToken(f"convolution token {token!r} is missing ':<filters>'")
        raise UnknownLayerToken(f"unknown layer token {token!r}")
    name, _, count = token.partition(":")
    if ":" in count:
        raise MalformedToken(f"token {token!r} has more than one colon")
    if name == LayerKind.DROPOUT2D.value:
        raise IllegalFilterCount("dropout layers carry no filter count")
    kind = next((k for k in LayerKind if k.value == name and k.is_conv), None)
    if kind is None:
        raise UnknownLayerToken(f"unknown layer token {name!r}")
    try:
        filters = int(count)
    except ValueError:
        raise MalformedToken(f"filter count {count!r} is not an integer") from None
    if filters not in FILTER_COUNTS:
        raise IllegalFilterCount(
            f"filter count must be one of {FILTER_COUNTS}, got {filters}"
        )
    return LayerSpec(kind, filters)


def parse(text: str, cfg: SearchSpaceConfig | None = None) -> Genotype:
    """Parse a canonical module string into a Genotype.

    Also accepts the display-table alias ``<filters>-<kind>`` per layer
    (e.g. ``64-5x5conv2d``) on input; output is always canonical form.
    """
    cfg = cfg or SearchSpaceConfig()
    if len(text) > MAX_ENCODED_LENGTH:
        raise TooManyLayers(f"encoded module exceeds {MAX_ENCODED_LENGTH} bytes")
    text = text.strip()
    if not text:
        raise EmptyModule("empty module string")
    tokens = text.split(",")
    if any(t == "" for t in tokens):
        raise MalformedToken("empty layer token (stray comma?)")
    if len(tokens) > cfg.max_num_layers:
        raise TooManyLayers(
            f"module has {len(tokens)} layers, limit is {cfg.max_num_layers}"
        )
    return Genotype(tuple(_parse_token(_normalize_alias(t)) for t in tokens))


def _normalize_alias(token: str) -> str:
    # "64-5x5conv2d" (table notation) -> "5x5conv2d:64"; input-only alias.
    head, sep, tail = token.partition("-")
    if sep and head.isdigit():
        return f"{tail}:{head}"
    return token


def serialize(g: Genotype) -> str:
    """Canonical comma-separated encoding; inverse of parse."""
    return g.canonical_key


def random_layer(rng: random.Random) -> LayerSpec:
    """Draw uniformly over the 17 catalog entries."""
    return rng.choice(CATALOG)


def random_genotype(rng: random.Random, cfg: SearchSpaceConfig | None = None) -> Genotype:
    """Random module: length uniform on 1..max_num_layers, layers uniform."""
    cfg = cfg or SearchSpaceConfig()
    n = rng.randint(1, cfg.max_num_layers)
    return Genotype(tuple(random_layer(rng) for _ in range(n)))


def search_space_size(cfg: SearchSpaceConfig | int | None = None) -> int:
    """Exact number of distinct ordered modules of length 1..max_num_layers.

    Accepts a bare integer (>= 0) as well as a SearchSpaceConfig.
    """
    if cfg is None:
        cfg = SearchSpaceConfig()
    max_layers = cfg if isinstance(cfg, int) else cfg.max_num_layers
    if max_layers < 0:
        raise ValueError("max_num_layers must be >= 0")
    n = len(CATALOG)
    return sum(n ** k for k in range(1, max_layers + 1))
