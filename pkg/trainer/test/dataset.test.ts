import { describe, expect, it } from "vitest";

import { addNoise, gaussian, makeDataset, makeRng } from "../src/dataset.js";

describe("synthetic dataset", () => {
  it("is deterministic for a fixed seed", () => {
    const a = makeDataset(7);
    const b = makeDataset(7);
    expect(Array.from(a.train)).toEqual(Array.from(b.train));
    expect(Array.from(a.val)).toEqual(Array.from(b.val));
  });

  it("differs across seeds", () => {
    const a = makeDataset(7);
    const b = makeDataset(8);
    expect(Array.from(a.train)).not.toEqual(Array.from(b.train));
  });

  it("stays in the tanh output range", () => {
    const ds = makeDataset(3);
    for (const v of ds.train) {
      expect(v).toBeGreaterThanOrEqual(-1);
      expect(v).toBeLessThanOrEqual(1);
    }
    expect(ds.train.length).toBe(ds.trainCount * ds.height * ds.width * ds.channels);
  });

  it("adds noise with roughly the requested variance", () => {
    const clean = new Float32Array(20000);
    const noisy = addNoise(clean, 1 / 3, 1, makeRng(11));
    const varEst = noisy.reduce((s, v) => s + v * v, 0) / noisy.length;
    expect(varEst).toBeGreaterThan(0.28);
    expect(varEst).toBeLessThan(0.39);
  });

  it("lambda scales the injected noise", () => {
    const clean = new Float32Array(1000);
    const none = addNoise(clean, 1 / 3, 0, makeRng(11));
    expect(none.every((v) => v === 0)).toBe(true);
  });

  it("gaussian deviates have near-zero mean", () => {
    const rng = makeRng(5);
    let sum = 0;
    for (let i = 0; i < 20000; i++) sum += gaussian(rng);
    expect(Math.abs(sum / 20000)).toBeLessThan(0.03);
  });
});
