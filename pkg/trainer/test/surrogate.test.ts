import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { parse } from "../src/genotype.js";
import {
  fitnessFromLoss,
  moduleDistance,
  surrogateFitness,
  surrogateLoss,
} from "../src/surrogate.js";

const fixtures = JSON.parse(
  readFileSync(new URL("./fixtures/parity.json", import.meta.url), "utf-8"),
);

describe("surrogate fitness parity", () => {
  it("matches every reference distance/loss/fitness triple", () => {
    expect(fixtures.distance_pairs.length).toBeGreaterThanOrEqual(40);
    for (const pair of fixtures.distance_pairs) {
      const g = parse(pair.genotype);
      const t = parse(pair.target);
      expect(moduleDistance(g, t)).toBe(pair.distance);
      expect(surrogateLoss(g, pair.target)).toBeCloseTo(pair.loss, 12);
      expect(surrogateFitness(g, pair.target)).toBeCloseTo(pair.fitness, 12);
    }
  });

  it("is symmetric and zero on identical modules", () => {
    const g = parse("3x3conv2d:8,dropout2d,7x7conv2d:64");
    const t = parse("1x1conv2d:16,7x7conv2d:64");
    expect(moduleDistance(g, g)).toBe(0);
    expect(moduleDistance(g, t)).toBe(moduleDistance(t, g));
  });

  it("caps fitness at 10 for the target itself", () => {
    const target = "5x5conv2d:64";
    expect(surrogateFitness(parse(target), target)).toBeCloseTo(10.0, 12);
  });

  it("clamps loss at the floor", () => {
    expect(fitnessFromLoss(0)).toBe(1 / 1e-9);
    expect(fitnessFromLoss(-1)).toBe(1 / 1e-9);
  });
});
