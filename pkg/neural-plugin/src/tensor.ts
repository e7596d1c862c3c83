/**
 * Minimal NHWC tensor plumbing: flat Float64Array plus shape. All math in
 * this package runs in double precision; float32 only appears at the file
 * boundary.
 */

export interface Tensor4 {
  data: Float64Array;
  n: number;
  h: number;
  w: number;
  c: number;
}

export function t4(n: number, h: number, w: number, c: number): Tensor4 {
  return { data: new Float64Array(n * h * w * c), n, h, w, c };
}

export function like(t: Tensor4): Tensor4 {
  return t4(t.n, t.h, t.w, t.c);
}

export function clone(t: Tensor4): Tensor4 {
  return { data: t.data.slice(), n: t.n, h: t.h, w: t.w, c: t.c };
}

/** Flat index of (n, h, w, c). */
export function at(t: Tensor4, n: number, h: number, w: number, c: number): number {
  return ((n * t.h + h) * t.w + w) * t.c + c;
}
