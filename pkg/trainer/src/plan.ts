/**
 * Symbolic autoencoder plan built from a genotype, mirroring the Python
 * builder node-for-node: module convs (zero-padded, each followed by
 * ReLU), R reduction modules (1x1 conv doubling channels + 2x2 stride-2
 * max pool), then the mirror image in the decoder (2x2 stride-2
 * transposed conv + 1x1 conv restoring channels, reversed module convs
 * with swapped in/out channels) ending in a tanh projection.
 */

import { DROPOUT_P, Genotype, isConv, kernelSize } from "./genotype.js";

export class BuildError extends Error {}
export class SpatialUnderflow extends BuildError {}
export class IndivisibleInput extends BuildError {}

export type Shape = { height: number; width: number; channels: number };

export type Op =
  | "conv"
  | "dropout2d"
  | "relu"
  | "reduce1x1conv"
  | "maxpool2x2s2"
  | "dilate1x1conv"
  | "convtranspose2x2s2"
  | "tanh";

export interface PlanNode {
  op: Op;
  inShape: Shape;
  outShape: Shape;
  paramCount: number;
  kernel: number | null;
  dropoutP: number | null;
}

export interface NetworkPlan {
  encoder: PlanNode[];
  decoder: PlanNode[];
  bottleneck: Shape;
  totalParams: number;
  compressionRatio: number;
}

export interface BuildConfig {
  input: Shape;
  numReductions: number;
}

function elements(s: Shape): number {
  return s.height * s.width * s.channels;
}

function convParams(kernel: number, cIn: number, cOut: number): number {
  return kernel * kernel * cIn * cOut + cOut;
}

function checkSpatial(shape: Shape, numReductions: number): void {
  const factor = 2 ** numReductions;
  for (const dim of [shape.height, shape.width]) {
    if (dim < factor) {
      throw new SpatialUnderflow(
        `${numReductions} reductions shrink dimension ${dim} to zero`,
      );
    }
    if (dim % factor !== 0) {
      throw new IndivisibleInput(
        `input dimension ${dim} is not divisible by 2^${numReductions}`,
      );
    }
  }
}

type ModuleOp =
  | { kind: "dropout" }
  | { kind: "conv"; kernel: number; cIn: number; cOut: number };

export function buildPlan(g: Genotype, cfg: BuildConfig): NetworkPlan {
  if (cfg.numReductions < 1) {
    throw new BuildError("numReductions must be >= 1");
  }
  checkSpatial(cfg.input, cfg.numReductions);

  const encoder: PlanNode[] = [];
  const decoder: PlanNode[] = [];
  let shape = cfg.input;
  const moduleOps: ModuleOp[] = [];

  const emit = (
    nodes: PlanNode[],
    op: Op,
    outShape: Shape,
    params = 0,
    kernel: number | null = null,
    p: number | null = null,
  ) => {
    nodes.push({ op, inShape: shape, outShape, paramCount: params, kernel, dropoutP: p });
    shape = outShape;
  };

  for (const layer of g.layers) {
    if (!isConv(layer.kind)) {
      moduleOps.push({ kind: "dropout" });
      emit(encoder, "dropout2d", shape, 0, null, DROPOUT_P);
    } else {
      const k = kernelSize(layer.kind);
      const cIn = shape.channels;
      const cOut = layer.filters as number;
      moduleOps.push({ kind: "conv", kernel: k, cIn, cOut });
      emit(encoder, "conv", { ...shape, channels: cOut }, convParams(k, cIn, cOut), k);
      emit(encoder, "relu", shape);
    }
  }

  const postModule = shape;
  const reductionChannels: number[] = [];
  for (let r = 0; r < cfg.numReductions; r++) {
    const c = shape.channels;
    reductionChannels.push(c);
    emit(encoder, "reduce1x1conv", { ...shape, channels: 2 * c }, convParams(1, c, 2 * c), 1);
    emit(encoder, "relu", shape);
    emit(encoder, "maxpool2x2s2", {
      height: shape.height / 2,
      width: shape.width / 2,
      channels: shape.channels,
    });
  }

  const bottleneck = shape;

  for (const c of [...reductionChannels].reverse()) {
    const doubled = shape.channels;
    emit(
      decoder,
      "convtranspose2x2s2",
      { height: shape.height * 2, width: shape.width * 2, channels: doubled },
      convParams(2, doubled, doubled),
      2,
    );
    emit(decoder, "dilate1x1conv", { ...shape, channels: c }, convParams(1, doubled, c), 1);
    emit(decoder, "relu", shape);
  }

  // The decoder's last conv mirrors the encoder's first and projects back
  // to the input channel count; tanh follows it instead of ReLU.
  const firstConvIndex = moduleOps.findIndex((op) => op.kind === "conv");
  for (let i = moduleOps.length - 1; i >= 0; i--) {
    const op = moduleOps[i];
    if (op.kind === "dropout") {
      emit(decoder, "dropout2d", shape, 0, null, DROPOUT_P);
    } else {
      emit(
        decoder,
        "conv",
        { ...shape, channels: op.cIn },
        convParams(op.kernel, op.cOut, op.cIn),
        op.kernel,
      );
      if (i !== firstConvIndex) {
        emit(decoder, "relu", shape);
      }
    }
  }
  emit(decoder, "tanh", shape);

  const totalParams = [...encoder, ...decoder].reduce((s, n) => s + n.paramCount, 0);
  return {
    encoder,
    decoder,
    bottleneck,
    totalParams,
    compressionRatio: elements(bottleneck) / elements(postModule),
  };
}
