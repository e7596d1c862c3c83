/**
 * Softmax and the pixel-weighted cross-entropy loss.
 *
 * The loss is the mean over pixels of w(x) * (-log p[label(x)]), the plain
 * categorical cross entropy when all weights are 1. Log arguments are
 * clamped at 1e-12.
 */

const LOG_CLAMP = 1e-12;

/** Row-wise softmax of (pixels, K) logits. */
export function softmax(logits: Float64Array, pixels: number, k: number): Float64Array {
  const out = new Float64Array(pixels * k);
  for (let p = 0; p < pixels; p++) {
    const base = p * k;
    let max = -Infinity;
    for (let c = 0; c < k; c++) max = Math.max(max, logits[base + c]);
    let sum = 0;
    for (let c = 0; c < k; c++) {
      const e = Math.exp(logits[base + c] - max);
      out[base + c] = e;
      sum += e;
    }
    for (let c = 0; c < k; c++) out[base + c] /= sum;
  }
  return out;
}

export interface LossResult {
  loss: number;
  /** d(loss)/d(logits), same layout as the logits. */
  gradLogits: Float64Array;
}

/**
 * Weighted cross entropy from logits with its gradient.
 *
 * sampleWeight scales the whole sample's contribution (deformed copies
 * train at 1/3); pixel weights come from the precomputed weight map.
 */
export function weightedCrossEntropy(
  logits: Float64Array,
  labels: Uint8Array | Int32Array,
  weights: Float64Array | null,
  pixels: number,
  k: number,
  sampleWeight = 1.0,
): LossResult {
  const probs = softmax(logits, pixels, k);
  const grad = new Float64Array(pixels * k);
  let loss = 0;
  for (let p = 0; p < pixels; p++) {
    const w = (weights === null ? 1.0 : weights[p]) * sampleWeight;
    const base = p * k;
    const label = labels[p];
    loss += w * -Math.log(Math.max(probs[base + label], LOG_CLAMP));
    const scale = w / pixels;
    for (let c = 0; c < k; c++) {
      grad[base + c] = scale * (probs[base + c] - (c === label ? 1 : 0));
    }
  }
  return { loss: loss / pixels, gradLogits: grad };
}

/** Unweighted mean cross entropy, kept separate as an independent check. */
export function plainCrossEntropy(
  logits: Float64Array,
  labels: Uint8Array | Int32Array,
  pixels: number,
  k: number,
): number {
  const probs = softmax(logits, pixels, k);
  let loss = 0;
  for (let p = 0; p < pixels; p++) {
    loss += -Math.log(Math.max(probs[p * k + labels[p]], LOG_CLAMP));
  }
  return loss / pixels;
}
