/**
 * Typed-array view contract for volumes crossing the binding boundary.
 *
 * Inputs stay owned by the caller and are never written to; every
 * output is a freshly allocated array owned by the calling runtime.
 * Shapes are (z, y, x) with x fastest, matching the toolkit's layout,
 * and the data must be one contiguous row-major block.
 */

export type VolumeData = Uint8Array | Float32Array;

export interface Volume {
  /** (z, y, x) extents; use z = 1 for 2D data. */
  shape: readonly [number, number, number];
  /** Contiguous row-major voxels, length = z*y*x. */
  data: VolumeData;
  /** Physical voxel size in mm per (z, y, x) axis; defaults to 1. */
  spacing?: readonly [number, number, number];
}

export class TubeTopoError extends Error {
  readonly code: string;
  readonly exitCode: number;

  constructor(code: string, message: string, exitCode = 3) {
    super(message);
    this.name = "TubeTopoError";
    this.code = code;
    this.exitCode = exitCode;
  }
}

export function volumeLength(shape: readonly [number, number, number]): number {
  return shape[0] * shape[1] * shape[2];
}

export function validateVolume(vol: Volume, what: string): void {
  const [z, y, x] = vol.shape;
  if (![z, y, x].every((v) => Number.isInteger(v) && v >= 1)) {
    throw new TubeTopoError("bad-shape", `${what}: shape must be positive integers, got ${vol.shape}`);
  }
  if (!(vol.data instanceof Uint8Array) && !(vol.data instanceof Float32Array)) {
    throw new TubeTopoError("bad-dtype", `${what}: data must be Uint8Array or Float32Array`);
  }
  if (vol.data.length !== volumeLength(vol.shape)) {
    throw new TubeTopoError(
      "bad-shape",
      `${what}: data length ${vol.data.length} does not match shape ${vol.shape}`,
    );
  }
  if (vol.spacing !== undefined) {
    if (vol.spacing.length !== 3 || !vol.spacing.every((s) => Number.isFinite(s) && s > 0)) {
      throw new TubeTopoError("bad-spacing", `${what}: spacing must be three positive numbers`);
    }
  }
}

export function requireSameShape(a: Volume, b: Volume, what: string): void {
  if (a.shape[0] !== b.shape[0] || a.shape[1] !== b.shape[1] || a.shape[2] !== b.shape[2]) {
    throw new TubeTopoError("shape-mismatch", `${what}: shapes ${a.shape} vs ${b.shape}`);
  }
}
