/**
 * Tiny deterministic synthetic image set for autoencoder training.
 *
 * Images are smooth gradients plus a couple of soft blobs, valued in
 * [-1, 1] to match the model's tanh output.  The generator is a seeded
 * PRNG so every worker process sees the same data for the same seed,
 * keeping fitness comparable across workers.
 */

export interface Dataset {
  /** Row-major [n, h, w, c] image data in [-1, 1]. */
  train: Float32Array;
  val: Float32Array;
  trainCount: number;
  valCount: number;
  height: number;
  width: number;
  channels: number;
}

/** mulberry32: small, fast, seedable PRNG with uniform output in [0, 1). */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Gaussian deviate via Box-Muller on a uniform PRNG. */
export function gaussian(rng: () => number): number {
  let u = 0;
  while (u === 0) u = rng();
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * rng());
}

function renderImage(
  out: Float32Array,
  offset: number,
  h: number,
  w: number,
  c: number,
  rng: () => number,
): void {
  const gx = rng() * 2 - 1;
  const gy = rng() * 2 - 1;
  const blobs = Array.from({ length: 2 }, () => ({
    cx: rng() * w,
    cy: rng() * h,
    r: 1 + rng() * (w / 3),
    amp: rng() * 2 - 1,
  }));
  const phase = rng() * 2 * Math.PI;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let base = gx * (x / (w - 1) - 0.5) + gy * (y / (h - 1) - 0.5);
      for (const b of blobs) {
        const d2 = (x - b.cx) ** 2 + (y - b.cy) ** 2;
        base += b.amp * Math.exp(-d2 / (2 * b.r * b.r));
      }
      for (let ch = 0; ch < c; ch++) {
        const v = base + 0.3 * Math.sin(phase + (ch * 2 * Math.PI) / c);
        out[offset + (y * w + x) * c + ch] = Math.max(-1, Math.min(1, v));
      }
    }
  }
}

export function makeDataset(
  seed: number,
  trainCount = 48,
  valCount = 16,
  height = 16,
  width = 16,
  channels = 3,
): Dataset {
  const rng = makeRng(seed);
  const pixels = height * width * channels;
  const train = new Float32Array(trainCount * pixels);
  const val = new Float32Array(valCount * pixels);
  for (let i = 0; i < trainCount; i++) {
    renderImage(train, i * pixels, height, width, channels, rng);
  }
  for (let i = 0; i < valCount; i++) {
    renderImage(val, i * pixels, height, width, channels, rng);
  }
  return { train, val, trainCount, valCount, height, width, channels };
}

/** Additive Gaussian noise with variance sigma2, scaled by lambda. */
export function addNoise(
  data: Float32Array,
  sigma2: number,
  lambda: number,
  rng: () => number,
): Float32Array {
  const sigma = Math.sqrt(sigma2);
  const out = new Float32Array(data.length);
  for (let i = 0; i < data.length; i++) {
    out[i] = data[i] + lambda * sigma * gaussian(rng);
  }
  return out;
}
