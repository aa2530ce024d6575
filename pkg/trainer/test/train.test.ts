import { describe, expect, it } from "vitest";

import { makeDataset } from "../src/dataset.js";
import { parse } from "../src/genotype.js";
import { buildPlan } from "../src/plan.js";
import { modelParamCount, planToModel, trainAndScore } from "../src/train.js";
import { ERROR_LOSS, evaluateTask } from "../src/worker.js";

describe("tfjs training", () => {
  it("realises the plan with the exact parameter count", () => {
    const plan = buildPlan(parse("3x3conv2d:16,dropout2d"), {
      input: { height: 16, width: 16, channels: 3 },
      numReductions: 2,
    });
    const model = planToModel(plan);
    expect(modelParamCount(model)).toBe(plan.totalParams);
    model.dispose();
  });

  it("trains a small genotype to finite reciprocal fitness", async () => {
    const ds = makeDataset(42, 24, 8);
    const out = await trainAndScore(parse("3x3conv2d:8"), { epochs: 1 }, ds);
    expect(Number.isFinite(out.fitness)).toBe(true);
    expect(out.fitness).toBeGreaterThan(0);
    expect(out.loss).toBeGreaterThan(0);
    expect(out.fitness * out.loss).toBeCloseTo(1.0, 9);
  }, 120_000);

  it("manifold mode autoencodes without injected noise", async () => {
    const ds = makeDataset(42, 24, 8);
    const out = await trainAndScore(
      parse("3x3conv2d:8"),
      { epochs: 1, mode: "manifold" },
      ds,
    );
    expect(out.fitness).toBeGreaterThan(0);
  }, 120_000);
});

describe("external task evaluation", () => {
  const task = (genotype: string, evalConfig: object) => ({
    type: "task_assignment",
    task_id: "t1",
    genotype,
    eval_config: evalConfig,
    lease_id: "l1",
  });

  it("returns a trained result for an external task", async () => {
    const result = await evaluateTask(
      task("3x3conv2d:8", { evaluator_kind: "external", epochs: 1, reductions: 2 }),
      "w-test",
    );
    expect(result.type).toBe("task_result");
    expect(result.error).toBeUndefined();
    expect(result.fitness as number).toBeGreaterThan(0);
  }, 120_000);

  it("turns build failures into errored results, never throws", async () => {
    const result = await evaluateTask(
      task("3x3conv2d:8", { evaluator_kind: "external", reductions: 5 }),
      "w-test",
    );
    expect(result.fitness).toBe(0);
    expect(result.loss).toBe(ERROR_LOSS);
    expect(String(result.error)).toContain("SpatialUnderflow");
  });

  it("serves surrogate tasks with the reference landscape", async () => {
    const result = await evaluateTask(
      task("5x5conv2d:64", { evaluator_kind: "surrogate", target_key: "5x5conv2d:64" }),
      "w-test",
    );
    expect(result.fitness).toBeCloseTo(10.0, 9);
    expect(result.loss).toBeCloseTo(0.1, 9);
  });

  it("flags bad genotypes as errors", async () => {
    const result = await evaluateTask(
      task("warp9", { evaluator_kind: "surrogate" }),
      "w-test",
    );
    expect(result.fitness).toBe(0);
    expect(String(result.error)).toContain("UnknownLayerToken");
  });
});
