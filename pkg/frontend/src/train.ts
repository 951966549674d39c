/** The training loop: asymmetric mask regression and focal double-talk
 * classification, balanced by learned homoscedastic task weights.
 */

import { Adam } from "./adam.js";
import { DTD_CLASSES, INPUT_SIZE, MASK_BINS } from "./arch.js";
import {
  FrameDataset, loadFrameDataset, readManifest, splitRecords,
} from "./data.js";
import { batchFocalLoss, batchSuppressionLoss, combinedLoss } from "./losses.js";
import { TrainerModel } from "./model.js";
import { Rng } from "./rng.js";

export interface TrainConfig {
  manifestPath: string;
  epochs: number;
  seed: number;
  /** Penalty weight on over-suppressed bins; lower is more aggressive. */
  alpha?: number;
  /** Focusing exponent of the classification loss. */
  gamma?: number;
  batchSize?: number;
  learningRate?: number;
  /** Keep every k-th frame of each record. */
  frameStride?: number;
  /** Drop mutually silent frames instead of training on them as label 2. */
  excludeSilence?: boolean;
  /** Restrict the mask loss to double-talk frames. */
  maskDoubleTalkOnly?: boolean;
  /** Share of records (off the end of the manifest) held out. */
  validationFraction?: number;
}

export interface EpochLog {
  epoch: number;
  mask_loss: number;
  dtd_loss: number;
  combined_loss: number;
  accuracy: number;
  f1: number;
  lr: number;
}

export interface TrainResult {
  model: TrainerModel;
  log: EpochLog[];
  logVars: Float64Array;
}

export interface TrainHooks {
  onEpoch?: (log: EpochLog) => void;
}

interface ResolvedConfig extends Required<Omit<TrainConfig, "manifestPath" | "seed" | "epochs">> {
  manifestPath: string;
  seed: number;
  epochs: number;
}

export function resolveConfig(config: TrainConfig): ResolvedConfig {
  const resolved: ResolvedConfig = {
    manifestPath: config.manifestPath,
    epochs: config.epochs,
    seed: config.seed,
    alpha: config.alpha ?? 0.5,
    gamma: config.gamma ?? 2,
    batchSize: config.batchSize ?? 64,
    learningRate: config.learningRate ?? 0.003,
    frameStride: config.frameStride ?? 1,
    excludeSilence: config.excludeSilence ?? false,
    maskDoubleTalkOnly: config.maskDoubleTalkOnly ?? false,
    validationFraction: config.validationFraction ?? 0.1,
  };
  if (!(resolved.alpha > 0 && resolved.alpha <= 1)) {
    throw new Error(`alpha must lie in (0, 1], got ${resolved.alpha}`);
  }
  if (!(resolved.gamma >= 0)) {
    throw new Error(`gamma must be >= 0, got ${resolved.gamma}`);
  }
  if (!Number.isInteger(resolved.epochs) || resolved.epochs < 1) {
    throw new Error(`epochs must be a positive integer, got ${resolved.epochs}`);
  }
  if (!Number.isInteger(resolved.batchSize) || resolved.batchSize < 1) {
    throw new Error(`batchSize must be a positive integer, got ${resolved.batchSize}`);
  }
  if (!(resolved.learningRate > 0)) {
    throw new Error(`learningRate must be positive, got ${resolved.learningRate}`);
  }
  if (!Number.isInteger(resolved.seed)) {
    throw new Error(`seed must be an integer, got ${resolved.seed}`);
  }
  return resolved;
}

function assembleBatch(
  dataset: FrameDataset, indices: Int32Array, start: number, count: number,
  features: Float64Array, masks: Float64Array, labels: Uint8Array,
): void {
  for (let b = 0; b < count; b++) {
    const frame = indices[start + b];
    const fBase = frame * INPUT_SIZE;
    const bBase = b * INPUT_SIZE;
    for (let i = 0; i < INPUT_SIZE; i++) features[bBase + i] = dataset.features[fBase + i];
    const mBase = frame * MASK_BINS;
    const oBase = b * MASK_BINS;
    for (let i = 0; i < MASK_BINS; i++) masks[oBase + i] = dataset.masks[mBase + i];
    labels[b] = dataset.labels[frame];
  }
}

export interface ClassifierReport {
  accuracy: number;
  f1: number;
  /** Mean predicted mask value per true label (NaN where unsupported). */
  meanMaskByLabel: Float64Array;
}

/** Macro F1 over the classes present in the reference labels. */
export function macroF1(
  reference: Uint8Array, predicted: Uint8Array, classes = DTD_CLASSES,
): number {
  let total = 0;
  let counted = 0;
  for (let c = 0; c < classes; c++) {
    let tp = 0;
    let fp = 0;
    let fn = 0;
    for (let i = 0; i < reference.length; i++) {
      const isRef = reference[i] === c;
      const isPred = predicted[i] === c;
      if (isRef && isPred) tp += 1;
      else if (!isRef && isPred) fp += 1;
      else if (isRef && !isPred) fn += 1;
    }
    if (tp + fn === 0) continue;
    total += (2 * tp) / (2 * tp + fp + fn);
    counted += 1;
  }
  return counted === 0 ? NaN : total / counted;
}

/** Run inference-mode forward over a dataset and score the classifier. */
export function evaluateClassifier(
  model: TrainerModel, dataset: FrameDataset, batchSize = 256,
): ClassifierReport {
  const predicted = new Uint8Array(dataset.n);
  const maskSums = new Float64Array(DTD_CLASSES);
  const maskCounts = new Float64Array(DTD_CLASSES);
  const features = new Float64Array(batchSize * INPUT_SIZE);
  for (let start = 0; start < dataset.n; start += batchSize) {
    const count = Math.min(batchSize, dataset.n - start);
    for (let b = 0; b < count; b++) {
      const fBase = (start + b) * INPUT_SIZE;
      for (let i = 0; i < INPUT_SIZE; i++) {
        features[b * INPUT_SIZE + i] = dataset.features[fBase + i];
      }
    }
    const out = model.forwardEval(features.subarray(0, count * INPUT_SIZE), count);
    for (let b = 0; b < count; b++) {
      let best = 0;
      for (let c = 1; c < DTD_CLASSES; c++) {
        if (out.probs[b * DTD_CLASSES + c] > out.probs[b * DTD_CLASSES + best]) best = c;
      }
      predicted[start + b] = best;
      const label = dataset.labels[start + b];
      let sum = 0;
      for (let k = 0; k < MASK_BINS; k++) sum += out.mask[b * MASK_BINS + k];
      maskSums[label] += sum / MASK_BINS;
      maskCounts[label] += 1;
    }
  }
  let correct = 0;
  for (let i = 0; i < dataset.n; i++) {
    if (predicted[i] === dataset.labels[i]) correct += 1;
  }
  const meanMaskByLabel = new Float64Array(DTD_CLASSES);
  for (let c = 0; c < DTD_CLASSES; c++) {
    meanMaskByLabel[c] = maskCounts[c] === 0 ? NaN : maskSums[c] / maskCounts[c];
  }
  return {
    accuracy: dataset.n === 0 ? NaN : correct / dataset.n,
    f1: macroF1(dataset.labels, predicted),
    meanMaskByLabel,
  };
}

/** Train a model from a mixture manifest; deterministic for a fixed seed. */
export function train(config: TrainConfig, hooks: TrainHooks = {}): TrainResult {
  const cfg = resolveConfig(config);
  const entries = readManifest(cfg.manifestPath);
  const { train: trainEntries, val: valEntries } = splitRecords(
    entries, cfg.validationFraction,
  );
  const loadOptions = {
    frameStride: cfg.frameStride, excludeSilence: cfg.excludeSilence,
  };
  const trainSet = loadFrameDataset(cfg.manifestPath, trainEntries, loadOptions);
  if (trainSet.n === 0) throw new Error("training dataset is empty");
  const valSet = valEntries.length > 0
    ? loadFrameDataset(cfg.manifestPath, valEntries, loadOptions)
    : trainSet;

  const model = new TrainerModel(cfg.seed);
  const logVars = new Float64Array(2);
  const trainables = new Map(model.params);
  trainables.set("loss.log_vars", logVars);
  const adam = new Adam(cfg.learningRate);
  const shuffleRng = new Rng(cfg.seed + 0x51ed);

  const indices = new Int32Array(trainSet.n);
  for (let i = 0; i < indices.length; i++) indices[i] = i;
  const batchFeatures = new Float64Array(cfg.batchSize * INPUT_SIZE);
  const batchMasks = new Float64Array(cfg.batchSize * MASK_BINS);
  const batchLabels = new Uint8Array(cfg.batchSize);

  const log: EpochLog[] = [];
  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    shuffleRng.shuffle(indices);
    let maskLossSum = 0;
    let dtdLossSum = 0;
    let combinedSum = 0;
    let frameCount = 0;
    for (let start = 0; start < trainSet.n; start += cfg.batchSize) {
      const count = Math.min(cfg.batchSize, trainSet.n - start);
      assembleBatch(trainSet, indices, start, count, batchFeatures, batchMasks, batchLabels);
      const features = batchFeatures.subarray(0, count * INPUT_SIZE);
      const gTrue = batchMasks.subarray(0, count * MASK_BINS);
      const labels = batchLabels.subarray(0, count);

      const { out, cache } = model.forwardTrain(features, count);
      let frameWeights: Float64Array | null = null;
      if (cfg.maskDoubleTalkOnly) {
        frameWeights = new Float64Array(count);
        for (let b = 0; b < count; b++) frameWeights[b] = labels[b] === 2 ? 1 : 0;
      }
      const mask = batchSuppressionLoss(
        gTrue, out.mask, count, MASK_BINS, cfg.alpha, frameWeights,
      );
      const dtd = batchFocalLoss(out.probs, labels, count, DTD_CLASSES, cfg.gamma);
      const combined = combinedLoss([mask.loss, dtd.loss], logVars);

      const dMask = mask.grad;
      for (let i = 0; i < dMask.length; i++) dMask[i] *= combined.dLosses[0];
      const dProbs = dtd.dProbs;
      for (let i = 0; i < dProbs.length; i++) dProbs[i] *= combined.dLosses[1];
      const grads = model.backward(dMask, dProbs, cache);
      grads.set("loss.log_vars", combined.dLogVars);
      adam.update(trainables, grads);

      maskLossSum += mask.loss * count;
      dtdLossSum += dtd.loss * count;
      combinedSum += combined.total * count;
      frameCount += count;
    }
    const report = evaluateClassifier(model, valSet);
    const entry: EpochLog = {
      epoch,
      mask_loss: maskLossSum / frameCount,
      dtd_loss: dtdLossSum / frameCount,
      combined_loss: combinedSum / frameCount,
      accuracy: report.accuracy,
      f1: report.f1,
      lr: cfg.learningRate,
    };
    log.push(entry);
    hooks.onEpoch?.(entry);
  }
  return { model, log, logVars };
}
