/**
 * Training harness: weighted cross entropy over precomputed weight-map
 * slices, optional elastic-deformation copies at reduced sample weight,
 * Adam with step-down learning-rate schedule and early stopping, and warm
 * starts from a previous weights file (the whole model transfers, final
 * layer included; nothing is frozen so the encoder keeps learning).
 */

import * as fs from "node:fs";

import { Adam } from "./adam.js";
import { Manifest, Slice, loadSlice, readManifest, standardizeSlice } from "./data.js";
import { DeformParams, elasticDeform } from "./deform.js";
import { weightedCrossEntropy } from "./loss.js";
import { Rng } from "./rng.js";
import { Tensor4, t4 } from "./tensor.js";
import { UNet, WeightsFile, applyWeights, saveWeights } from "./unet.js";

export interface TrainOptions {
  dataPath: string;
  outPath: string;
  valPath?: string;
  initPath?: string;
  epochs: number;       // default 40
  batchSize: number;    // default 10
  lr: number;           // default 1e-5
  steps?: number;       // fixed update count; overrides the epoch machinery
  seed: number;
  levels: number;       // default 3
  filters: number;      // default 16
  deformAlpha: number;  // 0 disables augmentation
  deformSigma: number;
  deformWeight: number; // default 1/3
}

export const TRAIN_DEFAULTS = {
  epochs: 40,
  batchSize: 10,
  lr: 1e-5,
  seed: 0,
  levels: 3,
  filters: 16,
  deformAlpha: 0,
  deformSigma: 4,
  deformWeight: 1 / 3,
};

const LR_DECAY = 0.9;            // times 0.9 per two consecutive flat epochs
const EARLY_STOP_PATIENCE = 5;   // flat epochs before stopping

interface TrainSample {
  image: Float64Array;   // standardized
  labels: Uint8Array;
  weights: Float64Array; // pixel weights times the sample weight
  width: number;
  height: number;
}

function loadTrainingSlices(manifest: Manifest): Slice[] {
  const slices = manifest.entries.map((e) => loadSlice(manifest, e));
  for (const s of slices) {
    if (s.labels === null) {
      throw new Error(`slice ${s.id} has no label channel; cannot train on it`);
    }
  }
  return slices;
}

function toSample(s: Slice, sampleWeight: number): TrainSample {
  const pixels = s.width * s.height;
  const weights = new Float64Array(pixels);
  for (let i = 0; i < pixels; i++) {
    weights[i] = (s.weights ? s.weights[i] : 1.0) * sampleWeight;
  }
  return {
    image: standardizeSlice(s.image),
    labels: s.labels!,
    weights,
    width: s.width,
    height: s.height,
  };
}

function batchLoss(model: UNet, batch: TrainSample[], k: number,
                   training: boolean): { loss: number; grad: Tensor4 } {
  const n = batch.length;
  const { height: h, width: w } = batch[0];
  const x = t4(n, h, w, 1);
  const labels = new Uint8Array(n * h * w);
  const weights = new Float64Array(n * h * w);
  for (let i = 0; i < n; i++) {
    x.data.set(batch[i].image, i * h * w);
    labels.set(batch[i].labels, i * h * w);
    weights.set(batch[i].weights, i * h * w);
  }
  const logits = model.forward(x, training);
  const { loss, gradLogits } = weightedCrossEntropy(
    logits.data, labels, weights, n * h * w, k);
  return { loss, grad: { data: gradLogits, n, h, w: logits.w, c: k } };
}

function datasetLoss(model: UNet, samples: TrainSample[], k: number,
                     batchSize: number): number {
  let total = 0;
  let count = 0;
  for (let i = 0; i < samples.length; i += batchSize) {
    const batch = samples.slice(i, i + batchSize);
    total += batchLoss(model, batch, k, true).loss * batch.length;
    count += batch.length;
  }
  return total / count;
}

export interface TrainResult {
  initialLoss: number;
  finalLoss: number;
  stepsRun: number;
  epochsRun: number;
  finalLr: number;
}

export function train(opts: TrainOptions): TrainResult {
  const manifest = readManifest(opts.dataPath);
  const k = manifest.num_classes;
  const slices = loadTrainingSlices(manifest);
  const samples = slices.map((s) => toSample(s, 1.0));

  const rng = new Rng(opts.seed);
  let model: UNet;
  if (opts.initPath) {
    const doc = JSON.parse(fs.readFileSync(opts.initPath, "utf-8")) as WeightsFile;
    if (doc.config.numClasses !== k) {
      throw new Error(
        `transfer init has ${doc.config.numClasses} classes but the dataset ` +
        `has ${k}; final-layer transfer needs identical classes`);
    }
    model = new UNet(doc.config, rng);
    applyWeights(model, doc);
  } else {
    model = new UNet(
      { inChannels: 1, numClasses: k, levels: opts.levels, baseFilters: opts.filters },
      rng);
  }

  const validation = opts.valPath
    ? loadTrainingSlices(readManifest(opts.valPath)).map((s) => toSample(s, 1.0))
    : null;
  const deform: DeformParams = { alpha: opts.deformAlpha, sigma: opts.deformSigma };

  const optimizer = new Adam(model.params());
  let lr = opts.lr;
  const initialLoss = datasetLoss(model, samples, k, opts.batchSize);

  let stepsRun = 0;
  let epochsRun = 0;

  const runBatch = (batch: TrainSample[]) => {
    model.zeroGrads();
    const { loss, grad } = batchLoss(model, batch, k, true);
    model.backward(grad);
    optimizer.step(lr);
    stepsRun += 1;
    return loss;
  };

  const epochBatches = (): TrainSample[][] => {
    const order = rng.shuffle(samples.length);
    const batches: TrainSample[][] = [];
    for (let i = 0; i < order.length; i += opts.batchSize) {
      const batch = order.slice(i, i + opts.batchSize).map((j) => samples[j]);
      if (opts.deformAlpha > 0) {
        const deformed = order.slice(i, i + opts.batchSize).map((j) => {
          const s = slices[j];
          const d = elasticDeform(s.image, s.labels, s.weights, s.height, s.width,
                                  deform, rng);
          return toSample({ ...s, image: d.image, labels: d.labels,
                            weights: d.weights }, opts.deformWeight);
        });
        batch.push(...deformed);
      }
      batches.push(batch);
    }
    return batches;
  };

  if (opts.steps !== undefined) {
    let pending: TrainSample[][] = [];
    while (stepsRun < opts.steps) {
      if (pending.length === 0) pending = epochBatches();
      runBatch(pending.shift()!);
    }
  } else {
    let best = Infinity;
    let flatEpochs = 0;
    for (let epoch = 0; epoch < opts.epochs; epoch++) {
      for (const batch of epochBatches()) runBatch(batch);
      epochsRun += 1;
      const monitored = validation
        ? datasetLoss(model, validation, k, opts.batchSize)
        : datasetLoss(model, samples, k, opts.batchSize);
      if (monitored < best - 1e-12) {
        best = monitored;
        flatEpochs = 0;
      } else {
        flatEpochs += 1;
        if (flatEpochs % 2 === 0) lr *= LR_DECAY;
        if (flatEpochs >= EARLY_STOP_PATIENCE) break;
      }
    }
  }

  const finalLoss = datasetLoss(model, samples, k, opts.batchSize);
  fs.writeFileSync(opts.outPath, saveWeights(model));
  return { initialLoss, finalLoss, stepsRun, epochsRun, finalLr: lr };
}
