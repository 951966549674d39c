/** Dataset access: mixture manifests and per-record training-tensor dumps.
 *
 * The generator writes a ``manifest.jsonl`` describing each mixture record
 * and, beside it, one ``<record dir>.raet`` dump per record holding the
 * frame-aligned tensors (little-endian: magic ``RAET``, ``u32`` version 1,
 * ``u32`` frame count, f32 features ``[T, 2, 40, 32]``, f32 mask targets
 * ``[T, 64]``, u8 labels ``[T]``). This module reads both and assembles a
 * flat frame-level dataset.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";

import { INPUT_SIZE, MASK_BINS } from "./arch.js";

const TARGETS_MAGIC = "RAET";
const TARGETS_VERSION = 1;

export interface ManifestEntry {
  index: number;
  dir: string;
  /** WAV paths relative to the manifest's directory, keyed u/d/s/y. */
  files: Record<string, string>;
  nFrames: number;
  /** Per-frame flag, 1 where both near end and echo are inactive. */
  silence: Uint8Array;
  /** Per-frame double-talk labels (0 near-only, 1 far-only, 2 otherwise). */
  labels: Uint8Array;
  targetSerDb: number;
  nearendSilent: boolean;
  sampleRate: number;
}

export interface RecordTargets {
  frames: number;
  features: Float32Array;
  masks: Float32Array;
  labels: Uint8Array;
}

export interface FrameDataset {
  n: number;
  features: Float32Array;
  masks: Float32Array;
  labels: Uint8Array;
  recordIndex: Int32Array;
}

export interface LoadOptions {
  /** Keep every k-th frame of each record (default 1 = all frames). */
  frameStride?: number;
  /** Drop mutually silent frames instead of keeping them labeled 2. */
  excludeSilence?: boolean;
}

/** Inverse of the manifest's ``[[value, run], ...]`` run-length encoding. */
export function runLengthDecode(pairs: ReadonlyArray<readonly [number, number]>): Uint8Array {
  let total = 0;
  for (const [, run] of pairs) total += run;
  const out = new Uint8Array(total);
  let offset = 0;
  for (const [value, run] of pairs) {
    out.fill(value, offset, offset + run);
    offset += run;
  }
  return out;
}

export function readManifest(path: string): ManifestEntry[] {
  const text = readFileSync(path, "utf-8");
  const entries: ManifestEntry[] = [];
  for (const [lineNo, line] of text.split("\n").entries()) {
    if (line.trim() === "") continue;
    let parsed: Record<string, unknown>;
    try {
      parsed = JSON.parse(line) as Record<string, unknown>;
    } catch {
      throw new Error(`${path}:${lineNo + 1}: invalid manifest line`);
    }
    const params = parsed.params as Record<string, unknown>;
    entries.push({
      index: parsed.index as number,
      dir: parsed.dir as string,
      files: parsed.files as Record<string, string>,
      nFrames: parsed.n_frames as number,
      silence: runLengthDecode(parsed.silence_rle as Array<[number, number]>),
      labels: runLengthDecode(parsed.labels_rle as Array<[number, number]>),
      targetSerDb: params.target_ser_db as number,
      nearendSilent: parsed.nearend_silent as boolean,
      sampleRate: parsed.sample_rate as number,
    });
  }
  return entries;
}

export function targetsPathFor(manifestPath: string, entry: ManifestEntry): string {
  return join(dirname(manifestPath), `${entry.dir}.raet`);
}

export function readTargets(path: string): RecordTargets {
  const raw = readFileSync(path);
  if (raw.length < 12) throw new Error(`${path}: truncated header (${raw.length} bytes)`);
  if (raw.toString("ascii", 0, 4) !== TARGETS_MAGIC) {
    throw new Error(`${path}: bad magic ${raw.subarray(0, 4).toString("hex")}`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== TARGETS_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const frames = raw.readUInt32LE(8);
  const featBytes = frames * INPUT_SIZE * 4;
  const maskBytes = frames * MASK_BINS * 4;
  const expected = 12 + featBytes + maskBytes + frames;
  if (raw.length !== expected) {
    throw new Error(`${path}: expected ${expected} bytes for ${frames} frames, got ${raw.length}`);
  }
  // Copy into a fresh, aligned buffer so typed-array views are valid.
  const aligned = new ArrayBuffer(raw.length);
  new Uint8Array(aligned).set(raw);
  return {
    frames,
    features: new Float32Array(aligned, 12, frames * INPUT_SIZE),
    masks: new Float32Array(aligned, 12 + featBytes, frames * MASK_BINS),
    labels: new Uint8Array(aligned, 12 + featBytes + maskBytes, frames),
  };
}

function selectedFrames(entry: ManifestEntry, options: LoadOptions): number[] {
  const stride = options.frameStride ?? 1;
  if (!Number.isInteger(stride) || stride < 1) {
    throw new Error(`frameStride must be a positive integer, got ${stride}`);
  }
  const indices: number[] = [];
  for (let l = 0; l < entry.nFrames; l += stride) {
    if (options.excludeSilence === true && entry.silence[l] === 1) continue;
    indices.push(l);
  }
  return indices;
}

/** Assemble a flat frame dataset from manifest entries and their dumps. */
export function loadFrameDataset(
  manifestPath: string, entries: readonly ManifestEntry[], options: LoadOptions = {},
): FrameDataset {
  const perEntry = entries.map((entry) => selectedFrames(entry, options));
  const total = perEntry.reduce((a, list) => a + list.length, 0);
  const features = new Float32Array(total * INPUT_SIZE);
  const masks = new Float32Array(total * MASK_BINS);
  const labels = new Uint8Array(total);
  const recordIndex = new Int32Array(total);
  let at = 0;
  entries.forEach((entry, e) => {
    const indices = perEntry[e];
    if (indices.length === 0) return;
    const targets = readTargets(targetsPathFor(manifestPath, entry));
    if (targets.frames !== entry.nFrames) {
      throw new Error(
        `${entry.dir}: dump holds ${targets.frames} frames, manifest says ${entry.nFrames}`,
      );
    }
    for (const l of indices) {
      features.set(
        targets.features.subarray(l * INPUT_SIZE, (l + 1) * INPUT_SIZE),
        at * INPUT_SIZE,
      );
      masks.set(
        targets.masks.subarray(l * MASK_BINS, (l + 1) * MASK_BINS),
        at * MASK_BINS,
      );
      labels[at] = targets.labels[l];
      recordIndex[at] = entry.index;
      at += 1;
    }
  });
  return { n: total, features, masks, labels, recordIndex };
}

/** Record-level split; the validation share comes off the end of the list. */
export function splitRecords(
  entries: readonly ManifestEntry[], validationFraction: number,
): { train: ManifestEntry[]; val: ManifestEntry[] } {
  if (!(validationFraction >= 0 && validationFraction < 1)) {
    throw new Error(`validationFraction must be in [0, 1), got ${validationFraction}`);
  }
  if (validationFraction === 0 || entries.length < 2) {
    return { train: [...entries], val: [] };
  }
  const valCount = Math.min(
    entries.length - 1,
    Math.max(1, Math.round(entries.length * validationFraction)),
  );
  return {
    train: entries.slice(0, entries.length - valCount),
    val: entries.slice(entries.length - valCount),
  };
}
