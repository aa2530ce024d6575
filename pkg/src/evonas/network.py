"""Symbolic autoencoder construction from a genotype.

Expands a layer module into a full encoder/decoder plan: the module's
layers (each conv followed by ReLU, zero-padded so spatial dims are
preserved), then R reduction modules in the encoder (1x1 conv doubling
channels + 2x2 stride-2 max pool), mirrored by R dilation modules in the
decoder (2x2 stride-2 transposed conv + 1x1 conv halving channels) and
the module layers reversed, ending in a projection conv back to the
input channel count and a final tanh.

The plan is purely symbolic: per-node tensor shapes and parameter
counts, no weights and no training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .genotype import Genotype, LayerKind, DROPOUT_P


class BuildError(ValueError):
    """Base class for plan construction errors."""


class SpatialUnderflow(BuildError):
    pass


class IndivisibleInput(BuildError):
    pass


# Plan node op names.
OP_CONV = "conv"
OP_DROPOUT = "dropout2d"
OP_RELU = "relu"
OP_REDUCE_CONV = "reduce1x1conv"
OP_MAXPOOL = "maxpool2x2s2"
OP_DILATE_CONV = "dilate1x1conv"
OP_CONV_TRANSPOSE = "convtranspose2x2s2"
OP_TANH = "tanh"


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.channels <= 0:
            raise BuildError(f"tensor dimensions must be positive: {self}")

    @property
    def elements(self) -> int:
        return self.height * self.width * self.channels

    def __str__(self) -> str:
        return f"{self.height}x{self.width}x{self.channels}"


@dataclass(frozen=True)
class BuildConfig:
    input_shape: TensorShape
    num_reductions: int = 2
    module_repeats: int = 1

    def __post_init__(self):
        if self.num_reductions < 1:
            raise BuildError("num_reductions must be >= 1")
        if self.module_repeats < 1:
            raise BuildError("module_repeats must be >= 1")


@dataclass(frozen=True)
class PlanNode:
    op: str
    in_shape: TensorShape
    out_shape: TensorShape
    param_count: int
    kernel: int | None = None
    dropout_p: float | None = None


@dataclass(frozen=True)
class NetworkPlan:
    encoder: tuple[PlanNode, ...]
    decoder: tuple[PlanNode, ...]
    bottleneck_shape: TensorShape
    total_params: int
    compression_ratio: float


def _conv_params(kernel: int, c_in: int, c_out: int) -> int:
    return kernel * kernel * c_in * c_out + c_out


def _check_spatial(shape: TensorShape, num_reductions: int) -> None:
    factor = 2 ** num_reductions
    for dim in (shape.height, shape.width):
        if dim < factor:
            raise SpatialUnderflow(
                f"{num_reductions} reductions shrink dimension {dim} to zero"
            )
        if dim % factor != 0:
            raise IndivisibleInput(
                f"input dimension {dim} is not divisible by 2^{num_reductions}"
            )


def build_plan(g: Genotype, cfg: BuildConfig) -> NetworkPlan:
    """Expand a genotype into a full symbolic encoder/decoder plan."""
    _check_spatial(cfg.input_shape, cfg.num_reductions)

    encoder: list[PlanNode] = []
    shape = cfg.input_shape
    # Conv layers seen in the encoder module body, in order, as
    # (kernel, c_in, c_out); the decoder mirrors this list reversed.
    module_ops: list[tuple] = []

    def emit(op, out_shape, params=0, kernel=None, p=None):
        nonlocal shape
        encoder.append(PlanNode(op, shape, out_shape, params, kernel, p))
        shape = out_shape

    for _ in range(cfg.module_repeats):
        for layer in g.layers:
            if layer.kind is LayerKind.DROPOUT2D:
                module_ops.append(("dropout",))
                emit(OP_DROPOUT, shape, p=DROPOUT_P)
            else:
                k = layer.kind.kernel_size
                c_in, c_out = shape.channels, layer.filters
                module_ops.append(("conv", k, c_in, c_out))
                out = TensorShape(shape.height, shape.width, c_out)
                emit(OP_CONV, out, _conv_params(k, c_in, c_out), kernel=k)
                emit(OP_RELU, shape)

    post_module_shape = shape
    # Channel counts entering each reduction; the decoder's dilation
    # modules restore them in reverse.
    reduction_channels: list[int] = []
    for _ in range(cfg.num_reductions):
        c = shape.channels
        reduction_channels.append(c)
        out = TensorShape(shape.height, shape.width, 2 * c)
        emit(OP_REDUCE_CONV, out, _conv_params(1, c, 2 * c), kernel=1)
        emit(OP_RELU, shape)
        emit(OP_MAXPOOL, TensorShape(shape.height // 2, shape.width // 2, shape.channels))

    bottleneck = shape

    decoder: list[PlanNode] = []

    def emit_d(op, out_shape, params=0, kernel=None, p=None):
        nonlocal shape
        decoder.append(PlanNode(op, shape, out_shape, params, kernel, p))
        shape = out_shape

    for c in reversed(reduction_channels):
        doubled = shape.channels
        out = TensorShape(shape.height * 2, shape.width * 2, doubled)
        emit_d(OP_CONV_TRANSPOSE, out, _conv_params(2, doubled, doubled), kernel=2)
        emit_d(OP_DILATE_CONV, TensorShape(shape.height, shape.width, c),
               _conv_params(1, doubled, c), kernel=1)
        emit_d(OP_RELU, shape)

    # The decoder's final conv (the encoder's first conv, mirrored) is the
    # projection back to the input channel count; tanh follows it instead
    # of ReLU.
    first_conv_index = min(
        (i for i, op in enumerate(module_ops) if op[0] == "conv"), default=None
    )
    for i in range(len(module_ops) - 1, -1, -1):
        op = module_ops[i]
        if op[0] == "dropout":
            emit_d(OP_DROPOUT, shape, p=DROPOUT_P)
        else:
            # Mirrored conv: swap in/out channels of the encoder conv.
            _, k, c_in, c_out = op
            out = TensorShape(shape.height, shape.width, c_in)
            emit_d(OP_CONV, out, _conv_params(k, c_out, c_in), kernel=k)
            if i != first_conv_index:
                emit_d(OP_RELU, shape)
    emit_d(OP_TANH, shape)

    total = sum(n.param_count for n in encoder) + sum(n.param_count for n in decoder)
    ratio = bottleneck.elements / post_module_shape.elements
    return NetworkPlan(tuple(encoder), tuple(decoder), bottleneck, total, ratio)


def param_count(plan: NetworkPlan) -> int:
    """Total learnable parameters (k*k*c_in*c_out + c_out per conv)."""
    return plan.total_params


@dataclass(frozen=True)
class ValidityReport:
    ok: bool
    error: str | None = None
    error_kind: str | None = None


def validate(g: Genotype, cfg: BuildConfig) -> ValidityReport:
    """Check whether (g, cfg) builds; errors become the report payload."""
    try:
        build_plan(g, cfg)
    except BuildError as e:
        return ValidityReport(False, str(e), type(e).__name__)
    return ValidityReport(True)


def shape_trace(nodes) -> list[TensorShape]:
    """Distinct consecutive tensor shapes along a node sequence."""
    if not nodes:
        return []
    trace = [nodes[0].in_shape]
    for n in nodes:
        if n.out_shape != trace[-1]:
            trace.append(n.out_shape)
    return trace


def describe(plan: NetworkPlan) -> str:
    """One node per line: op, in_shape, out_shape, params."""
    lines = []
    for section, nodes in (("encoder", plan.encoder), ("decoder", plan.decoder)):
        lines.append(f"[{section}]")
        for n in nodes:
            op = f"{n.kernel}x{n.kernel}{n.op}" if n.op == OP_CONV else n.op
            lines.append(f"  {op:<22} {str(n.in_shape):>12} -> {str(n.out_shape):<12} params={n.param_count}")
    lines.append(f"bottleneck: {plan.bottleneck_shape}")
    lines.append(f"total_params: {plan.total_params}")
    lines.append(f"compression_ratio: {plan.compression_ratio}")
    return "\n".join(lines)
