/**
 * Protocol serving: read the host's manifest, run the net on every slice,
 * write one probability file per entry, then the done marker, last.
 */

import * as fs from "node:fs";

import { loadSlice, readManifest, standardizeSlice, writeDoneMarker, writeProbs } from "./data.js";
import { softmax } from "./loss.js";
import { Rng } from "./rng.js";
import { t4 } from "./tensor.js";
import { loadWeights } from "./unet.js";

export function serve(manifestPath: string, outputDir: string, weightsPath: string): void {
  const manifest = readManifest(manifestPath);
  const model = loadWeights(fs.readFileSync(weightsPath, "utf-8"), new Rng(0));
  if (model.config.numClasses !== manifest.num_classes) {
    throw new Error(
      `weights serve ${model.config.numClasses} classes but the manifest ` +
      `asks for ${manifest.num_classes}`);
  }
  fs.mkdirSync(outputDir, { recursive: true });
  for (const entry of manifest.entries) {
    const slice = loadSlice(manifest, entry);
    const x = t4(1, slice.height, slice.width, 1);
    x.data.set(standardizeSlice(slice.image));
    const logits = model.forward(x, false);
    const probs = softmax(logits.data, slice.height * slice.width,
                          manifest.num_classes);
    writeProbs(outputDir, entry.id, probs);
  }
  writeDoneMarker(outputDir);
}
