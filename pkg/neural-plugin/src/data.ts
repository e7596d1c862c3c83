/**
 * Reading and writing the host's slice-exchange layout: manifest.json plus
 * raw little-endian files (float32 images/weights/probabilities, uint8
 * labels), all row-major.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface ManifestEntry {
  id: string;
  width: number;
  height: number;
  image_path: string;
  label_path?: string;
  weight_path?: string;
}

export interface Manifest {
  protocol_version: number;
  num_classes: number;
  entries: ManifestEntry[];
  dir: string;
}

export function readManifest(manifestPath: string): Manifest {
  const text = fs.readFileSync(manifestPath, "utf-8");
  const doc = JSON.parse(text);
  if (doc.protocol_version !== 1) {
    throw new Error(`unsupported protocol version ${doc.protocol_version}`);
  }
  return {
    protocol_version: doc.protocol_version,
    num_classes: doc.num_classes,
    entries: doc.entries,
    dir: path.dirname(manifestPath),
  };
}

export function readFloat32(file: string, count: number): Float64Array {
  const buf = fs.readFileSync(file);
  if (buf.length !== count * 4) {
    throw new Error(`${file}: expected ${count * 4} bytes, found ${buf.length}`);
  }
  const f32 = new Float32Array(buf.buffer, buf.byteOffset, count);
  return Float64Array.from(f32);
}

export function readUint8(file: string, count: number): Uint8Array {
  const buf = fs.readFileSync(file);
  if (buf.length !== count) {
    throw new Error(`${file}: expected ${count} bytes, found ${buf.length}`);
  }
  return new Uint8Array(buf.buffer.slice(buf.byteOffset, buf.byteOffset + count));
}

export interface Slice {
  id: string;
  width: number;
  height: number;
  image: Float64Array;
  labels: Uint8Array | null;
  weights: Float64Array | null;
}

export function loadSlice(manifest: Manifest, entry: ManifestEntry): Slice {
  const count = entry.width * entry.height;
  return {
    id: entry.id,
    width: entry.width,
    height: entry.height,
    image: readFloat32(path.join(manifest.dir, entry.image_path), count),
    labels: entry.label_path
      ? readUint8(path.join(manifest.dir, entry.label_path), count)
      : null,
    weights: entry.weight_path
      ? readFloat32(path.join(manifest.dir, entry.weight_path), count)
      : null,
  };
}

/**
 * Plugin-internal input scaling: each slice is standardized on its own
 * statistics so the net sees comparable inputs whatever the host's
 * intensity range. Applied identically at training and serving time.
 */
export function standardizeSlice(image: Float64Array): Float64Array {
  let mean = 0;
  for (const v of image) mean += v;
  mean /= image.length;
  let varAcc = 0;
  for (const v of image) varAcc += (v - mean) * (v - mean);
  const sd = Math.sqrt(varAcc / image.length);
  const out = new Float64Array(image.length);
  const scale = 1.0 / (sd + 1e-6);
  for (let i = 0; i < image.length; i++) out[i] = (image[i] - mean) * scale;
  return out;
}

export function writeProbs(outDir: string, id: string, probs: Float64Array): void {
  fs.writeFileSync(path.join(outDir, `probs_${id}.bin`),
                   Buffer.from(Float32Array.from(probs).buffer));
}

export function writeDoneMarker(outDir: string): void {
  fs.writeFileSync(path.join(outDir, "done"), "");
}
