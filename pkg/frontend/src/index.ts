/**
 * In-memory binding for the tubetopo pipeline.
 *
 * Volumes cross the boundary as contiguous typed arrays; each call
 * round-trips them through the toolkit's NIfTI wire format and drives
 * the CLI in a scratch directory, so results are identical to invoking
 * the command line on the same data and configuration. Calls run in
 * child processes and never block the event loop; inputs are read-only
 * throughout.
 */

import { readFile, writeFile } from "node:fs/promises";
import { join } from "node:path";

import { requireSameShape, TubeTopoError, validateVolume, Volume } from "./arrays.js";
import { decodeNifti, encodeNifti } from "./nifti.js";
import { runCli, withWorkdir } from "./runner.js";

export { TubeTopoError } from "./arrays.js";
export type { Volume, VolumeData } from "./arrays.js";
export { decodeNifti, encodeNifti } from "./nifti.js";

export const API_VERSION = "0.1.0";

export interface MineOptions {
  seed?: number;
  window?: readonly [number, number, number];
  eps?: number;
  minPts?: number;
  representative?: "random" | "medoid";
  iterations?: number;
  threshold?: number;
}

export interface CandidateSummary {
  pred_side: number;
  gt_side: number;
  merged: number;
  reduced: number;
}

export interface MineResult {
  /** Discontinuity mask, same shape as the inputs, freshly allocated. */
  mask: Uint8Array;
  shape: readonly [number, number, number];
  candidates: CandidateSummary;
  seeds: number[][];
  maskVoxels: number;
}

export interface EvaluateOptions {
  iterations?: number;
  threshold?: number;
  hd95?: boolean;
  classes?: readonly number[];
}

export interface BettiRecord {
  b0: number;
  b1: number;
  b2: number;
  euler: number;
}

export interface MetricsRecord {
  dice: number;
  cldice: number;
  betti_pred: BettiRecord;
  betti_gt: BettiRecord;
  betti_error: number;
  hausdorff_mm: number | null;
  hausdorff_defined: boolean;
  per_class?: Array<{
    label: number;
    dice: number;
    cldice: number;
    hausdorff_mm: number | null;
    hausdorff_defined: boolean;
  }>;
}

function seedArgs(seed?: number): string[] {
  return seed === undefined ? [] : ["--seed", String(seed)];
}

async function writeVolume(dir: string, name: string, vol: Volume): Promise<string> {
  const path = join(dir, name);
  await writeFile(path, encodeNifti(vol));
  return path;
}

/**
 * Mine discontinuity windows from a ground-truth / prediction pair.
 *
 * gt must be a binary uint8 volume; pred may be uint8 (mask) or
 * float32 (foreground probability, binarised at the threshold).
 */
export async function mine(gt: Volume, pred: Volume, opts: MineOptions = {}): Promise<MineResult> {
  validateVolume(gt, "gt");
  validateVolume(pred, "pred");
  requireSameShape(gt, pred, "mine");
  if (!(gt.data instanceof Uint8Array)) {
    throw new TubeTopoError("bad-dtype", "gt must be a Uint8Array mask");
  }
  return withWorkdir(async (dir) => {
    const gtPath = await writeVolume(dir, "gt.nii", gt);
    const predPath = await writeVolume(dir, "pred.nii", pred);
    const maskPath = join(dir, "fd.nii");
    const reportPath = join(dir, "edm.json");
    const args = ["mine", gtPath, predPath, "-o", maskPath, "--report", reportPath,
                  ...seedArgs(opts.seed)];
    if (opts.window) args.push("--window", ...opts.window.map(String));
    if (opts.eps !== undefined) args.push("--eps", String(opts.eps));
    if (opts.minPts !== undefined) args.push("--min-pts", String(opts.minPts));
    if (opts.representative) args.push("--representative", opts.representative);
    if (opts.iterations !== undefined) args.push("--iterations", String(opts.iterations));
    if (opts.threshold !== undefined) args.push("--threshold", String(opts.threshold));
    await runCli(args);
    const mask = decodeNifti(await readFile(maskPath));
    const report = JSON.parse(await readFile(reportPath, "utf-8"));
    return {
      mask: mask.data as Uint8Array,
      shape: mask.shape,
      candidates: report.candidates as CandidateSummary,
      seeds: report.seeds as number[][],
      maskVoxels: report.mask_voxels as number,
    };
  });
}

/** Evaluate a prediction against ground truth (uint8 label volumes). */
export async function evaluate(
  pred: Volume,
  gt: Volume,
  opts: EvaluateOptions = {},
): Promise<MetricsRecord> {
  validateVolume(pred, "pred");
  validateVolume(gt, "gt");
  requireSameShape(pred, gt, "evaluate");
  return withWorkdir(async (dir) => {
    const predPath = await writeVolume(dir, "pred.nii", pred);
    const gtPath = await writeVolume(dir, "gt.nii", gt);
    const reportPath = join(dir, "metrics.json");
    const args = ["metrics", predPath, gtPath, "-o", reportPath];
    if (opts.iterations !== undefined) args.push("--iterations", String(opts.iterations));
    if (opts.threshold !== undefined) args.push("--threshold", String(opts.threshold));
    if (opts.hd95) args.push("--hd95");
    if (opts.classes) args.push("--classes", opts.classes.join(","));
    await runCli(args);
    const report = JSON.parse(await readFile(reportPath, "utf-8"));
    return report.metrics as MetricsRecord;
  });
}

/** Morphological soft skeleton of a binary mask. */
export async function softSkeleton(
  mask: Volume,
  opts: { iterations?: number } = {},
): Promise<{ skeleton: Uint8Array; shape: readonly [number, number, number]; voxels: number }> {
  validateVolume(mask, "mask");
  return withWorkdir(async (dir) => {
    const inPath = await writeVolume(dir, "mask.nii", mask);
    const outPath = join(dir, "skel.nii");
    const args = ["skeletonize", inPath, "-o", outPath];
    if (opts.iterations !== undefined) args.push("--iterations", String(opts.iterations));
    await runCli(args);
    const skel = decodeNifti(await readFile(outPath));
    let voxels = 0;
    for (const v of skel.data as Uint8Array) voxels += v === 0 ? 0 : 1;
    return { skeleton: skel.data as Uint8Array, shape: skel.shape, voxels };
  });
}

/** Endpoints of a skeleton mask, (z, y, x) rows in lexicographic order. */
export async function detectEndpoints(skeleton: Volume): Promise<number[][]> {
  validateVolume(skeleton, "skeleton");
  return withWorkdir(async (dir) => {
    const inPath = await writeVolume(dir, "skel.nii", skeleton);
    const outPath = join(dir, "endpoints.json");
    await runCli(["endpoints", inPath, "-o", outPath]);
    const doc = JSON.parse(await readFile(outPath, "utf-8"));
    return doc.endpoints as number[][];
  });
}
