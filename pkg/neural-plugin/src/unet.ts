/**
 * A small 2D encoder-decoder with skip connections and batch normalization.
 * Fully convolutional: any input whose sides are divisible by 2^(levels-1)
 * works. Depth and width are configurable and default far below production
 * scale; this is a reference plugin, not a record chaser.
 */

import {
  BatchNorm,
  Conv2d,
  MaxPool2,
  Param,
  Relu,
  Upsample2,
  concatChannels,
  splitChannels,
} from "./layers.js";
import { Rng } from "./rng.js";
import { Tensor4 } from "./tensor.js";

export interface UNetConfig {
  inChannels: number;
  numClasses: number;
  levels: number;
  baseFilters: number;
}

class DoubleConv {
  readonly conv1: Conv2d;
  readonly bn1: BatchNorm;
  readonly relu1 = new Relu();
  readonly conv2: Conv2d;
  readonly bn2: BatchNorm;
  readonly relu2 = new Relu();

  constructor(name: string, cin: number, cout: number, rng: Rng) {
    this.conv1 = new Conv2d(`${name}.conv1`, cin, cout, 3, rng);
    this.bn1 = new BatchNorm(`${name}.bn1`, cout);
    this.conv2 = new Conv2d(`${name}.conv2`, cout, cout, 3, rng);
    this.bn2 = new BatchNorm(`${name}.bn2`, cout);
  }

  forward(x: Tensor4, training: boolean): Tensor4 {
    let y = this.relu1.forward(this.bn1.forward(this.conv1.forward(x), training));
    return this.relu2.forward(this.bn2.forward(this.conv2.forward(y), training));
  }

  backward(dy: Tensor4): Tensor4 {
    let d = this.bn2.backward(this.relu2.backward(dy));
    d = this.conv2.backward(d);
    d = this.bn1.backward(this.relu1.backward(d));
    return this.conv1.backward(d);
  }

  params(): Param[] {
    return [...this.conv1.params(), ...this.bn1.params(),
            ...this.conv2.params(), ...this.bn2.params()];
  }
}

export class UNet {
  readonly config: UNetConfig;
  private readonly encoders: DoubleConv[] = [];
  private readonly pools: MaxPool2[] = [];
  private readonly ups: Upsample2[] = [];
  private readonly decoders: DoubleConv[] = [];
  private readonly head: Conv2d;
  private skips: Tensor4[] = [];

  constructor(config: UNetConfig, rng: Rng) {
    if (config.levels < 1) throw new Error("levels must be >= 1");
    this.config = config;
    let cin = config.inChannels;
    for (let i = 0; i < config.levels; i++) {
      const cout = config.baseFilters << i;
      this.encoders.push(new DoubleConv(`enc${i}`, cin, cout, rng));
      cin = cout;
      if (i < config.levels - 1) this.pools.push(new MaxPool2());
    }
    for (let i = config.levels - 2; i >= 0; i--) {
      const skipC = config.baseFilters << i;
      const fromC = config.baseFilters << (i + 1);
      this.ups.push(new Upsample2());
      this.decoders.push(new DoubleConv(`dec${i}`, fromC + skipC, skipC, rng));
    }
    this.head = new Conv2d("head", config.baseFilters, config.numClasses, 1, rng);
  }

  /** Divisibility the pooling ladder requires of input sides. */
  get sideMultiple(): number {
    return 1 << (this.config.levels - 1);
  }

  forward(x: Tensor4, training: boolean): Tensor4 {
    if (x.h % this.sideMultiple !== 0 || x.w % this.sideMultiple !== 0) {
      throw new Error(
        `input sides (${x.h}x${x.w}) must be divisible by ${this.sideMultiple}`);
    }
    this.skips = [];
    let cur = x;
    for (let i = 0; i < this.encoders.length; i++) {
      cur = this.encoders[i].forward(cur, training);
      if (i < this.pools.length) {
        this.skips.push(cur);
        cur = this.pools[i].forward(cur);
      }
    }
    for (let j = 0; j < this.decoders.length; j++) {
      const up = this.ups[j].forward(cur);
      const skip = this.skips[this.skips.length - 1 - j];
      cur = this.decoders[j].forward(concatChannels(up, skip), training);
    }
    return this.head.forward(cur);
  }

  backward(dLogits: Tensor4): void {
    let d = this.head.backward(dLogits);
    for (let j = this.decoders.length - 1; j >= 0; j--) {
      const skip = this.skips[this.skips.length - 1 - j];
      const dcat = this.decoders[j].backward(d);
      const [dup, dskip] = splitChannels(dcat, dcat.c - skip.c, skip.c);
      // the skip-path gradient rejoins the encoder gradient further down
      this.skipGrads[this.skips.length - 1 - j] = dskip;
      d = this.ups[j].backward(dup);
    }
    for (let i = this.encoders.length - 1; i >= 0; i--) {
      if (i < this.pools.length) {
        d = this.pools[i].backward(d);
        const extra = this.skipGrads[i];
        for (let k = 0; k < d.data.length; k++) d.data[k] += extra.data[k];
      }
      d = this.encoders[i].backward(d);
    }
    this.skipGrads = [];
  }

  private skipGrads: Tensor4[] = [];

  params(): Param[] {
    const out: Param[] = [];
    for (const e of this.encoders) out.push(...e.params());
    for (const dec of this.decoders) out.push(...dec.params());
    out.push(...this.head.params());
    return out;
  }

  zeroGrads(): void {
    for (const p of this.params()) p.grad.fill(0);
  }
}

export interface WeightsFile {
  format: number;
  config: UNetConfig;
  params: Record<string, number[]>;
}

export function saveWeights(model: UNet): string {
  const params: Record<string, number[]> = {};
  for (const p of model.params()) params[p.name] = Array.from(p.value);
  const doc: WeightsFile = { format: 1, config: model.config, params };
  return JSON.stringify(doc);
}

/**
 * Restore a model from a weights file. Transfer requires the identical
 * architecture, class count included: the final layer's weights only make
 * sense for the same classes.
 */
export function loadWeights(text: string, rng: Rng): UNet {
  const doc = JSON.parse(text) as WeightsFile;
  if (doc.format !== 1) throw new Error(`unsupported weights format ${doc.format}`);
  const model = new UNet(doc.config, rng);
  applyWeights(model, doc);
  return model;
}

export function applyWeights(model: UNet, doc: WeightsFile): void {
  const cfg = model.config;
  if (doc.config.numClasses !== cfg.numClasses) {
    throw new Error(
      `class count mismatch: weights carry ${doc.config.numClasses} classes, ` +
      `model expects ${cfg.numClasses} (the final layer transfers only between ` +
      `identical class sets)`);
  }
  if (doc.config.levels !== cfg.levels || doc.config.baseFilters !== cfg.baseFilters
      || doc.config.inChannels !== cfg.inChannels) {
    throw new Error("architecture mismatch between weights file and model config");
  }
  for (const p of model.params()) {
    const stored = doc.params[p.name];
    if (!stored || stored.length !== p.value.length) {
      throw new Error(`weights file is missing or misshapes parameter ${p.name}`);
    }
    p.value.set(stored);
  }
}
