/**
 * The layer zoo for the slice segmenter: 2D convolution, batch norm, ReLU,
 * 2x2 max pooling, nearest upsampling, and channel concatenation. Each
 * layer caches what its backward pass needs; gradients accumulate into the
 * layer's parameter buffers until zeroGrads().
 */

import { Rng } from "./rng.js";
import { Tensor4, at, like, t4 } from "./tensor.js";

export interface Param {
  name: string;
  value: Float64Array;
  grad: Float64Array;
  /** Running statistics and the like: saved, but not touched by the optimizer. */
  trainable: boolean;
}

export function makeParam(name: string, size: number, trainable = true): Param {
  return { name, value: new Float64Array(size), grad: new Float64Array(size), trainable };
}

export interface Layer {
  params(): Param[];
}

export class Conv2d implements Layer {
  readonly weight: Param; // (k*k*cin, cout), kernel position major
  readonly bias: Param;
  private x: Tensor4 | null = null;

  constructor(readonly name: string, readonly cin: number, readonly cout: number,
              readonly k: 1 | 3, rng: Rng) {
    this.weight = makeParam(`${name}.weight`, k * k * cin * cout);
    this.bias = makeParam(`${name}.bias`, cout);
    const std = Math.sqrt(2.0 / (k * k * cin));
    for (let i = 0; i < this.weight.value.length; i++) {
      this.weight.value[i] = rng.gaussian() * std;
    }
  }

  params(): Param[] {
    return [this.weight, this.bias];
  }

  forward(x: Tensor4): Tensor4 {
    this.x = x;
    const { k, cin, cout } = this;
    const pad = k === 3 ? 1 : 0;
    const y = t4(x.n, x.h, x.w, cout);
    const wv = this.weight.value;
    const bv = this.bias.value;
    const acc = new Float64Array(cout);
    for (let n = 0; n < x.n; n++) {
      for (let ho = 0; ho < x.h; ho++) {
        for (let wo = 0; wo < x.w; wo++) {
          acc.set(bv);
          for (let kh = 0; kh < k; kh++) {
            const hi = ho + kh - pad;
            if (hi < 0 || hi >= x.h) continue;
            for (let kw = 0; kw < k; kw++) {
              const wi = wo + kw - pad;
              if (wi < 0 || wi >= x.w) continue;
              const xBase = at(x, n, hi, wi, 0);
              const wBase = (kh * k + kw) * cin * cout;
              for (let ci = 0; ci < cin; ci++) {
                const xv = x.data[xBase + ci];
                if (xv === 0) continue;
                const wRow = wBase + ci * cout;
                for (let co = 0; co < cout; co++) {
                  acc[co] += xv * wv[wRow + co];
                }
              }
            }
          }
          y.data.set(acc, at(y, n, ho, wo, 0));
        }
      }
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const x = this.x!;
    const { k, cin, cout } = this;
    const pad = k === 3 ? 1 : 0;
    const dx = like(x);
    const wv = this.weight.value;
    const gw = this.weight.grad;
    const gb = this.bias.grad;
    for (let n = 0; n < x.n; n++) {
      for (let ho = 0; ho < x.h; ho++) {
        for (let wo = 0; wo < x.w; wo++) {
          const dyBase = at(dy, n, ho, wo, 0);
          for (let co = 0; co < cout; co++) gb[co] += dy.data[dyBase + co];
          for (let kh = 0; kh < k; kh++) {
            const hi = ho + kh - pad;
            if (hi < 0 || hi >= x.h) continue;
            for (let kw = 0; kw < k; kw++) {
              const wi = wo + kw - pad;
              if (wi < 0 || wi >= x.w) continue;
              const xBase = at(x, n, hi, wi, 0);
              const wBase = (kh * k + kw) * cin * cout;
              for (let ci = 0; ci < cin; ci++) {
                const xv = x.data[xBase + ci];
                const wRow = wBase + ci * cout;
                let dxv = 0;
                for (let co = 0; co < cout; co++) {
                  const d = dy.data[dyBase + co];
                  gw[wRow + co] += xv * d;
                  dxv += wv[wRow + co] * d;
                }
                dx.data[xBase + ci] += dxv;
              }
            }
          }
        }
      }
    }
    return dx;
  }
}

export class BatchNorm implements Layer {
  readonly gamma: Param;
  readonly beta: Param;
  readonly runMean: Param;
  readonly runVar: Param;
  private xhat: Tensor4 | null = null;
  private invStd: Float64Array | null = null;
  static readonly EPS = 1e-5;
  static readonly MOMENTUM = 0.9;

  constructor(readonly name: string, readonly c: number) {
    this.gamma = makeParam(`${name}.gamma`, c);
    this.beta = makeParam(`${name}.beta`, c);
    this.runMean = makeParam(`${name}.run_mean`, c, false);
    this.runVar = makeParam(`${name}.run_var`, c, false);
    this.gamma.value.fill(1.0);
    this.runVar.value.fill(1.0);
  }

  params(): Param[] {
    return [this.gamma, this.beta, this.runMean, this.runVar];
  }

  forward(x: Tensor4, training: boolean): Tensor4 {
    const { c } = this;
    const m = x.n * x.h * x.w;
    const y = like(x);
    const mean = new Float64Array(c);
    const variance = new Float64Array(c);
    if (training) {
      for (let i = 0; i < x.data.length; i += c) {
        for (let ch = 0; ch < c; ch++) mean[ch] += x.data[i + ch];
      }
      for (let ch = 0; ch < c; ch++) mean[ch] /= m;
      for (let i = 0; i < x.data.length; i += c) {
        for (let ch = 0; ch < c; ch++) {
          const d = x.data[i + ch] - mean[ch];
          variance[ch] += d * d;
        }
      }
      for (let ch = 0; ch < c; ch++) variance[ch] /= m;
      const mom = BatchNorm.MOMENTUM;
      for (let ch = 0; ch < c; ch++) {
        this.runMean.value[ch] = mom * this.runMean.value[ch] + (1 - mom) * mean[ch];
        this.runVar.value[ch] = mom * this.runVar.value[ch] + (1 - mom) * variance[ch];
      }
    } else {
      mean.set(this.runMean.value);
      variance.set(this.runVar.value);
    }
    const invStd = new Float64Array(c);
    for (let ch = 0; ch < c; ch++) invStd[ch] = 1.0 / Math.sqrt(variance[ch] + BatchNorm.EPS);
    const xhat = like(x);
    for (let i = 0; i < x.data.length; i += c) {
      for (let ch = 0; ch < c; ch++) {
        const h = (x.data[i + ch] - mean[ch]) * invStd[ch];
        xhat.data[i + ch] = h;
        y.data[i + ch] = this.gamma.value[ch] * h + this.beta.value[ch];
      }
    }
    this.xhat = training ? xhat : null;
    this.invStd = training ? invStd : null;
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const { c } = this;
    const xhat = this.xhat!;
    const invStd = this.invStd!;
    const m = dy.n * dy.h * dy.w;
    const dx = like(dy);
    const sumDy = new Float64Array(c);
    const sumDyXhat = new Float64Array(c);
    for (let i = 0; i < dy.data.length; i += c) {
      for (let ch = 0; ch < c; ch++) {
        sumDy[ch] += dy.data[i + ch];
        sumDyXhat[ch] += dy.data[i + ch] * xhat.data[i + ch];
      }
    }
    for (let ch = 0; ch < c; ch++) {
      this.beta.grad[ch] += sumDy[ch];
      this.gamma.grad[ch] += sumDyXhat[ch];
    }
    for (let i = 0; i < dy.data.length; i += c) {
      for (let ch = 0; ch < c; ch++) {
        const g = this.gamma.value[ch];
        dx.data[i + ch] = (g * invStd[ch] / m) *
          (m * dy.data[i + ch] - sumDy[ch] - xhat.data[i + ch] * sumDyXhat[ch]);
      }
    }
    return dx;
  }
}

export class Relu {
  private mask: Uint8Array | null = null;

  forward(x: Tensor4): Tensor4 {
    const y = like(x);
    const mask = new Uint8Array(x.data.length);
    for (let i = 0; i < x.data.length; i++) {
      if (x.data[i] > 0) {
        y.data[i] = x.data[i];
        mask[i] = 1;
      }
    }
    this.mask = mask;
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const dx = like(dy);
    const mask = this.mask!;
    for (let i = 0; i < dy.data.length; i++) {
      if (mask[i]) dx.data[i] = dy.data[i];
    }
    return dx;
  }
}

export class MaxPool2 {
  private argmax: Int32Array | null = null;
  private inShape: Tensor4 | null = null;

  forward(x: Tensor4): Tensor4 {
    const y = t4(x.n, x.h >> 1, x.w >> 1, x.c);
    const argmax = new Int32Array(y.data.length);
    for (let n = 0; n < x.n; n++) {
      for (let ho = 0; ho < y.h; ho++) {
        for (let wo = 0; wo < y.w; wo++) {
          for (let c = 0; c < x.c; c++) {
            let best = -Infinity;
            let bestIdx = -1;
            for (let dh = 0; dh < 2; dh++) {
              for (let dw = 0; dw < 2; dw++) {
                const idx = at(x, n, ho * 2 + dh, wo * 2 + dw, c);
                if (x.data[idx] > best) {
                  best = x.data[idx];
                  bestIdx = idx;
                }
              }
            }
            const oIdx = at(y, n, ho, wo, c);
            y.data[oIdx] = best;
            argmax[oIdx] = bestIdx;
          }
        }
      }
    }
    this.argmax = argmax;
    this.inShape = x;
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const dx = like(this.inShape!);
    const argmax = this.argmax!;
    for (let i = 0; i < dy.data.length; i++) {
      dx.data[argmax[i]] += dy.data[i];
    }
    return dx;
  }
}

export class Upsample2 {
  forward(x: Tensor4): Tensor4 {
    const y = t4(x.n, x.h * 2, x.w * 2, x.c);
    for (let n = 0; n < x.n; n++) {
      for (let h = 0; h < y.h; h++) {
        for (let w = 0; w < y.w; w++) {
          const src = at(x, n, h >> 1, w >> 1, 0);
          y.data.set(x.data.subarray(src, src + x.c), at(y, n, h, w, 0));
        }
      }
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const dx = t4(dy.n, dy.h >> 1, dy.w >> 1, dy.c);
    for (let n = 0; n < dy.n; n++) {
      for (let h = 0; h < dy.h; h++) {
        for (let w = 0; w < dy.w; w++) {
          const src = at(dy, n, h, w, 0);
          const dst = at(dx, n, h >> 1, w >> 1, 0);
          for (let c = 0; c < dy.c; c++) dx.data[dst + c] += dy.data[src + c];
        }
      }
    }
    return dx;
  }
}

/** Channel concatenation of two same-shape-in-NHW tensors. */
export function concatChannels(a: Tensor4, b: Tensor4): Tensor4 {
  const y = t4(a.n, a.h, a.w, a.c + b.c);
  const pixels = a.n * a.h * a.w;
  for (let p = 0; p < pixels; p++) {
    y.data.set(a.data.subarray(p * a.c, (p + 1) * a.c), p * y.c);
    y.data.set(b.data.subarray(p * b.c, (p + 1) * b.c), p * y.c + a.c);
  }
  return y;
}

export function splitChannels(dy: Tensor4, ca: number, cb: number): [Tensor4, Tensor4] {
  const da = t4(dy.n, dy.h, dy.w, ca);
  const db = t4(dy.n, dy.h, dy.w, cb);
  const pixels = dy.n * dy.h * dy.w;
  for (let p = 0; p < pixels; p++) {
    da.data.set(dy.data.subarray(p * dy.c, p * dy.c + ca), p * ca);
    db.data.set(dy.data.subarray(p * dy.c + ca, (p + 1) * dy.c), p * cb);
  }
  return [da, db];
}
