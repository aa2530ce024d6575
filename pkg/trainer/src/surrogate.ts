/**
 * Surrogate fitness: reciprocal of (0.1 + edit distance to a target
 * module).  Numerically identical to the in-process Python evaluator so
 * a trainer worker can serve surrogate and delay tasks interchangeably
 * with the reference workers.
 */

import { Genotype, LayerSpec, layerToken, parse } from "./genotype.js";

export const LOSS_FLOOR = 1e-9;
export const SURROGATE_BASE_LOSS = 0.1;

const SUBST_SAME_KIND = 0.5;
const SUBST_DIFF_KIND = 1.0;
const INDEL_COST = 1.0;

export function fitnessFromLoss(loss: number): number {
  return 1.0 / Math.max(loss, LOSS_FLOOR);
}

function substCost(a: LayerSpec, b: LayerSpec): number {
  if (layerToken(a) === layerToken(b)) return 0.0;
  if (a.kind === b.kind) return SUBST_SAME_KIND;
  return SUBST_DIFF_KIND;
}

/**
 * Edit distance between two layer modules: substitution 0 / 0.5 / 1.0
 * (identical / same kind / different kind), insert and delete 1.0.
 */
export function moduleDistance(g: Genotype, t: Genotype): number {
  const a = g.layers;
  const b = t.layers;
  let prev = Array.from({ length: b.length + 1 }, (_, j) => j * INDEL_COST);
  for (let i = 1; i <= a.length; i++) {
    const cur = [i * INDEL_COST];
    for (let j = 1; j <= b.length; j++) {
      cur[j] = Math.min(
        prev[j - 1] + substCost(a[i - 1], b[j - 1]),
        prev[j] + INDEL_COST,
        cur[j - 1] + INDEL_COST,
      );
    }
    prev = cur;
  }
  return prev[b.length];
}

export function surrogateLoss(g: Genotype, targetKey: string): number {
  return SURROGATE_BASE_LOSS + moduleDistance(g, parse(targetKey));
}

export function surrogateFitness(g: Genotype, targetKey: string): number {
  return fitnessFromLoss(surrogateLoss(g, targetKey));
}
