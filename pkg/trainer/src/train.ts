/**
 * Real training evaluator: realises the symbolic plan as a TensorFlow.js
 * model, trains it briefly on the synthetic dataset, and reports fitness
 * as the reciprocal of validation MSE.
 *
 * Two modes:
 *  - "denoise": inputs are the images plus lambda-scaled Gaussian noise,
 *    targets are the clean images.
 *  - "manifold": plain autoencoding (inputs == targets).
 */

import * as tf from "@tensorflow/tfjs";

import { addNoise, Dataset, makeDataset, makeRng } from "./dataset.js";
import { Genotype } from "./genotype.js";
import { buildPlan, NetworkPlan, PlanNode } from "./plan.js";
import { fitnessFromLoss } from "./surrogate.js";

export interface TrainOptions {
  mode: "denoise" | "manifold";
  epochs: number;
  reductions: number;
  noiseSigma2: number;
  /** Scale on the injected noise in denoise mode. */
  lambda: number;
  datasetSeed: number;
  batchSize: number;
}

export const DEFAULT_TRAIN_OPTIONS: TrainOptions = {
  mode: "denoise",
  epochs: 2,
  reductions: 2,
  noiseSigma2: 1 / 3,
  lambda: 1,
  datasetSeed: 20260823,
  batchSize: 16,
};

export interface TrainOutcome {
  fitness: number;
  loss: number;
}

function addNode(model: tf.Sequential, node: PlanNode, first: boolean): void {
  const inputShape = first
    ? [node.inShape.height, node.inShape.width, node.inShape.channels]
    : undefined;
  switch (node.op) {
    case "conv":
    case "reduce1x1conv":
    case "dilate1x1conv":
      model.add(
        tf.layers.conv2d({
          filters: node.outShape.channels,
          kernelSize: node.kernel as number,
          padding: "same",
          inputShape,
        }),
      );
      break;
    case "convtranspose2x2s2":
      model.add(
        tf.layers.conv2dTranspose({
          filters: node.outShape.channels,
          kernelSize: 2,
          strides: 2,
          padding: "same",
          inputShape,
        }),
      );
      break;
    case "maxpool2x2s2":
      model.add(tf.layers.maxPooling2d({ poolSize: 2, strides: 2 }));
      break;
    case "dropout2d":
      model.add(tf.layers.dropout({ rate: node.dropoutP as number }));
      break;
    case "relu":
      model.add(tf.layers.activation({ activation: "relu" }));
      break;
    case "tanh":
      model.add(tf.layers.activation({ activation: "tanh" }));
      break;
  }
}

export function planToModel(plan: NetworkPlan): tf.Sequential {
  const model = tf.sequential();
  const nodes = [...plan.encoder, ...plan.decoder];
  nodes.forEach((node, i) => addNode(model, node, i === 0));
  return model;
}

/** Learnable parameters of the realised model (sanity check vs the plan). */
export function modelParamCount(model: tf.Sequential): number {
  return model.countParams();
}

export async function trainAndScore(
  g: Genotype,
  opts: Partial<TrainOptions> = {},
  dataset?: Dataset,
): Promise<TrainOutcome> {
  // Drop undefined entries so absent overrides fall back to the defaults.
  const given = Object.fromEntries(
    Object.entries(opts).filter(([, v]) => v !== undefined),
  );
  const o: TrainOptions = { ...DEFAULT_TRAIN_OPTIONS, ...given };
  const ds = dataset ?? makeDataset(o.datasetSeed);
  const plan = buildPlan(g, {
    input: { height: ds.height, width: ds.width, channels: ds.channels },
    numReductions: o.reductions,
  });
  const model = planToModel(plan);
  model.compile({ optimizer: tf.train.adam(1e-3), loss: "meanSquaredError" });

  const imageShape = [ds.height, ds.width, ds.channels];
  const noiseRng = makeRng(o.datasetSeed ^ 0x5f3759df);
  const corrupt = (data: Float32Array) =>
    o.mode === "denoise" ? addNoise(data, o.noiseSigma2, o.lambda, noiseRng) : data;

  const xsTrain = tf.tensor4d(corrupt(ds.train), [ds.trainCount, ...imageShape] as [
    number, number, number, number,
  ]);
  const ysTrain = tf.tensor4d(ds.train, [ds.trainCount, ...imageShape] as [
    number, number, number, number,
  ]);
  const xsVal = tf.tensor4d(corrupt(ds.val), [ds.valCount, ...imageShape] as [
    number, number, number, number,
  ]);
  const ysVal = tf.tensor4d(ds.val, [ds.valCount, ...imageShape] as [
    number, number, number, number,
  ]);
  try {
    await model.fit(xsTrain, ysTrain, {
      epochs: o.epochs,
      batchSize: o.batchSize,
      shuffle: false,
      verbose: 0,
    });
    const evalOut = model.evaluate(xsVal, ysVal) as tf.Scalar;
    const valMse = (await evalOut.data())[0];
    evalOut.dispose();
    if (!Number.isFinite(valMse) || valMse < 0) {
      throw new Error(`validation MSE is not a finite non-negative number: ${valMse}`);
    }
    return { fitness: fitnessFromLoss(valMse), loss: valMse };
  } finally {
    xsTrain.dispose();
    ysTrain.dispose();
    xsVal.dispose();
    ysVal.dispose();
    model.dispose();
  }
}
