/**
 * Self-checks for the loss: unit weights must reproduce plain cross
 * entropy, and the analytic logit gradient must match central finite
 * differences on a small random fixture.
 */

import { plainCrossEntropy, weightedCrossEntropy } from "./loss.js";
import { Rng } from "./rng.js";

export interface LossCheckResult {
  unitWeightAbsDiff: number;
  gradMaxRelErr: number;
}

export function checkLoss(seed: number, k = 3, side = 4): LossCheckResult {
  const rng = new Rng(seed);
  const pixels = side * side;
  const logits = new Float64Array(pixels * k);
  for (let i = 0; i < logits.length; i++) logits[i] = rng.gaussian() * 2.0;
  const labels = new Uint8Array(pixels);
  for (let i = 0; i < pixels; i++) labels[i] = rng.int(k);
  const weights = new Float64Array(pixels);
  for (let i = 0; i < pixels; i++) weights[i] = rng.uniform(0.5, 2.0);

  const unit = new Float64Array(pixels).fill(1.0);
  const viaWeighted = weightedCrossEntropy(logits, labels, unit, pixels, k).loss;
  const plain = plainCrossEntropy(logits, labels, pixels, k);
  const unitWeightAbsDiff = Math.abs(viaWeighted - plain);

  const analytic = weightedCrossEntropy(logits, labels, weights, pixels, k).gradLogits;
  let gradMaxRelErr = 0;
  const eps = 1e-6;
  for (let sample = 0; sample < 10; sample++) {
    const idx = rng.int(pixels * k);
    const saved = logits[idx];
    logits[idx] = saved + eps;
    const up = weightedCrossEntropy(logits, labels, weights, pixels, k).loss;
    logits[idx] = saved - eps;
    const down = weightedCrossEntropy(logits, labels, weights, pixels, k).loss;
    logits[idx] = saved;
    const fd = (up - down) / (2 * eps);
    const rel = Math.abs(fd - analytic[idx]) / Math.max(Math.abs(fd), Math.abs(analytic[idx]), 1e-8);
    gradMaxRelErr = Math.max(gradMaxRelErr, rel);
  }
  return { unitWeightAbsDiff, gradMaxRelErr };
}
