/** Adam with the usual constants; operates on the model's parameter list. */

import { Param } from "./layers.js";

export class Adam {
  private readonly m = new Map<string, Float64Array>();
  private readonly v = new Map<string, Float64Array>();
  private t = 0;

  constructor(private readonly params: Param[],
              readonly beta1 = 0.9, readonly beta2 = 0.999, readonly eps = 1e-8) {
    for (const p of params) {
      if (!p.trainable) continue;
      this.m.set(p.name, new Float64Array(p.value.length));
      this.v.set(p.name, new Float64Array(p.value.length));
    }
  }

  step(lr: number): void {
    this.t += 1;
    const bc1 = 1 - Math.pow(this.beta1, this.t);
    const bc2 = 1 - Math.pow(this.beta2, this.t);
    for (const p of this.params) {
      if (!p.trainable) continue;
      const m = this.m.get(p.name)!;
      const v = this.v.get(p.name)!;
      for (let i = 0; i < p.value.length; i++) {
        const g = p.grad[i];
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g * g;
        p.value[i] -= lr * (m[i] / bc1) / (Math.sqrt(v[i] / bc2) + this.eps);
      }
    }
  }
}
