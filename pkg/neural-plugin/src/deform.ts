/**
 * Random elastic deformation: one smoothed random displacement field moves
 * the image, labels and weights identically. Bilinear resampling for the
 * continuous channels, nearest for labels, clamped at the slice edges.
 */

import { Rng } from "./rng.js";

export interface DeformParams {
  /** Displacement strength in pixels. 0 disables the deformation. */
  alpha: number;
  /** Gaussian smoothing scale of the displacement field, in pixels. */
  sigma: number;
}

function gaussianKernel(sigma: number): Float64Array {
  const radius = Math.max(1, Math.ceil(3 * sigma));
  const kernel = new Float64Array(2 * radius + 1);
  let sum = 0;
  for (let i = -radius; i <= radius; i++) {
    const v = Math.exp(-(i * i) / (2 * sigma * sigma));
    kernel[i + radius] = v;
    sum += v;
  }
  for (let i = 0; i < kernel.length; i++) kernel[i] /= sum;
  return kernel;
}

function smooth(field: Float64Array, h: number, w: number, sigma: number): Float64Array {
  const kernel = gaussianKernel(sigma);
  const radius = (kernel.length - 1) >> 1;
  const tmp = new Float64Array(field.length);
  const out = new Float64Array(field.length);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let acc = 0;
      for (let k = -radius; k <= radius; k++) {
        const xx = Math.min(Math.max(x + k, 0), w - 1);
        acc += field[y * w + xx] * kernel[k + radius];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let acc = 0;
      for (let k = -radius; k <= radius; k++) {
        const yy = Math.min(Math.max(y + k, 0), h - 1);
        acc += tmp[yy * w + x] * kernel[k + radius];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

export interface DeformedSample {
  image: Float64Array;
  labels: Uint8Array | null;
  weights: Float64Array | null;
}

export function elasticDeform(
  image: Float64Array,
  labels: Uint8Array | null,
  weights: Float64Array | null,
  h: number,
  w: number,
  params: DeformParams,
  rng: Rng,
): DeformedSample {
  if (params.alpha === 0) {
    return {
      image: image.slice(),
      labels: labels ? labels.slice() : null,
      weights: weights ? weights.slice() : null,
    };
  }
  const rawX = new Float64Array(h * w);
  const rawY = new Float64Array(h * w);
  for (let i = 0; i < h * w; i++) {
    rawX[i] = rng.uniform(-1, 1);
    rawY[i] = rng.uniform(-1, 1);
  }
  const dx = smooth(rawX, h, w, params.sigma);
  const dy = smooth(rawY, h, w, params.sigma);
  for (let i = 0; i < h * w; i++) {
    dx[i] *= params.alpha;
    dy[i] *= params.alpha;
  }

  const outImage = new Float64Array(h * w);
  const outLabels = labels ? new Uint8Array(h * w) : null;
  const outWeights = weights ? new Float64Array(h * w) : null;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i = y * w + x;
      const sy = Math.min(Math.max(y + dy[i], 0), h - 1);
      const sx = Math.min(Math.max(x + dx[i], 0), w - 1);
      const y0 = Math.min(Math.floor(sy), h - 2 < 0 ? 0 : h - 2);
      const x0 = Math.min(Math.floor(sx), w - 2 < 0 ? 0 : w - 2);
      const fy = sy - y0;
      const fx = sx - x0;
      const i00 = y0 * w + x0;
      const i01 = i00 + 1;
      const i10 = i00 + w;
      const i11 = i10 + 1;
      // factored lerps stay exact on constant fields
      const top = image[i00] + fx * (image[i01] - image[i00]);
      const bottom = image[i10] + fx * (image[i11] - image[i10]);
      outImage[i] = top + fy * (bottom - top);
      if (outWeights && weights) {
        const wTop = weights[i00] + fx * (weights[i01] - weights[i00]);
        const wBottom = weights[i10] + fx * (weights[i11] - weights[i10]);
        outWeights[i] = wTop + fy * (wBottom - wTop);
      }
      if (outLabels && labels) {
        outLabels[i] = labels[Math.round(sy) * w + Math.round(sx)];
      }
    }
  }
  return { image: outImage, labels: outLabels, weights: outWeights };
}
