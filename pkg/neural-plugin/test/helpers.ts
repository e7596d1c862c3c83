import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { Rng } from "../src/rng.js";

/** Write a tiny training batch in the host's exchange layout. */
export function makeManifestDir(opts: {
  slices: number;
  side: number;
  numClasses: number;
  seed: number;
  withLabels?: boolean;
  withWeights?: boolean;
}): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "plugin-test-"));
  const rng = new Rng(opts.seed);
  const entries = [];
  const count = opts.side * opts.side;
  for (let i = 0; i < opts.slices; i++) {
    const id = `slice_${String(i).padStart(3, "0")}`;
    const image = new Float32Array(count);
    const labels = new Uint8Array(count);
    for (let p = 0; p < count; p++) {
      // blobby, learnable pattern: label follows a thresholded smooth field
      const y = Math.floor(p / opts.side);
      const x = p % opts.side;
      const field = Math.sin(x / 3 + i) + Math.cos(y / 4);
      labels[p] = field > 0.7 ? 1 : field < -0.7 ? Math.min(2, opts.numClasses - 1) : 0;
      image[p] = labels[p] * 100 + rng.gaussian() * 5;
    }
    const entry: Record<string, unknown> = {
      id, width: opts.side, height: opts.side, image_path: `image_${id}.bin`,
    };
    fs.writeFileSync(path.join(dir, `image_${id}.bin`), Buffer.from(image.buffer));
    if (opts.withLabels !== false) {
      entry.label_path = `labels_${id}.bin`;
      fs.writeFileSync(path.join(dir, `labels_${id}.bin`), Buffer.from(labels.buffer));
    }
    if (opts.withWeights) {
      const weights = new Float32Array(count).fill(1);
      entry.weight_path = `weights_${id}.bin`;
      fs.writeFileSync(path.join(dir, `weights_${id}.bin`), Buffer.from(weights.buffer));
    }
    entries.push(entry);
  }
  const manifest = {
    protocol_version: 1,
    num_classes: opts.numClasses,
    entries,
  };
  fs.writeFileSync(path.join(dir, "manifest.json"), JSON.stringify(manifest, null, 2));
  return dir;
}
