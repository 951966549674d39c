/** The trainable network: the runtime's architecture with batch
 * normalization after every convolution.
 *
 * Convolutions carry no bias while training — each is followed by a batch
 * norm whose shift plays that role — and the exporter folds the norm's
 * affine transform back into conv weights and biases, so the emitted
 * tensors match the runtime's expectations exactly. Fully connected heads
 * keep plain biases. The input normalizer stays an untrained identity.
 */

import {
  DTD_CLASSES, EMBEDDING_DIM, INPUT_SIZE, LAYERS, MASK_BINS,
  weightShapes,
} from "./arch.js";
import {
  BatchNormCache, batchNormBackwardCm, batchNormEvalForwardCm,
  batchNormTrainForwardCm, cmToSm, conv2dBackwardCm, conv2dForward,
  conv2dForwardCm, ConvDims, depthwiseBackwardCm, depthwiseForward,
  depthwiseForwardCm, DepthwiseDims, fcBackward, fcForward, gateBackwardCm,
  gateForward, gateForwardCm, globalPoolBackwardCm, globalPoolForward,
  globalPoolForwardCm, relu6Backward, relu6Forward, sigmoidBackward,
  sigmoidForward, smToCm, softmaxBackward, softmaxForward,
} from "./layers.js";

// conv2dForward/depthwiseForward/gateForward/globalPoolForward serve the
// sample-major folded path below; the Cm variants serve batched training.
import { Rng } from "./rng.js";

export const BN_MOMENTUM = 0.1;

interface ConvUnit {
  name: string;
  kind: "conv" | "depthwise";
  cIn: number;
  h: number;
  w: number;
  cOut: number;
  ho: number;
  wo: number;
  kernel: number;
  stride: number;
  padding: number;
  activation: "relu6" | "linear";
}

function buildConvUnits(): ConvUnit[] {
  const units: ConvUnit[] = [];
  for (const layer of LAYERS) {
    if (layer.kind !== "conv" && layer.kind !== "depthwise") continue;
    units.push({
      name: layer.name,
      kind: layer.kind,
      cIn: layer.inShape[0], h: layer.inShape[1], w: layer.inShape[2],
      cOut: layer.outShape[0], ho: layer.outShape[1], wo: layer.outShape[2],
      kernel: layer.kernel, stride: layer.stride, padding: layer.padding,
      activation: layer.activation === "relu6" ? "relu6" : "linear",
    });
  }
  return units;
}

export const CONV_UNITS: readonly ConvUnit[] = buildConvUnits();

const LAST_UNIT = CONV_UNITS[CONV_UNITS.length - 1];
export const TRUNK_C = LAST_UNIT.cOut;
export const TRUNK_HW = LAST_UNIT.ho * LAST_UNIT.wo;
export const FLAT_DIM = TRUNK_C * TRUNK_HW;
export const MASK_HIDDEN = 256;

interface FcUnit {
  name: string;
  inDim: number;
  outDim: number;
}

const FC_UNITS: readonly FcUnit[] = LAYERS
  .filter((layer) => layer.kind === "fc")
  .map((layer) => ({
    name: layer.name, inDim: layer.inShape[0], outDim: layer.outShape[0],
  }));

interface UnitCache {
  /** Unit input, channel-major [cIn][n·h·w]. */
  convIn: Float64Array;
  /** Normalized pre-activation, channel-major. */
  bnOut: Float64Array;
  bn: BatchNormCache;
}

export interface ForwardCache {
  n: number;
  units: UnitCache[];
  /** Trunk output, channel-major [TRUNK_C][n·TRUNK_HW]. */
  trunk: Float64Array;
  pooled: Float64Array;
  dtdFc1Pre: Float64Array;
  embedding: Float64Array;
  probs: Float64Array;
  gains: Float64Array;
  /** Gated trunk flattened per sample, [n][FLAT_DIM]. */
  gated: Float64Array;
  maskFc1Pre: Float64Array;
  maskFc1Out: Float64Array;
  mask: Float64Array;
}

export interface ForwardResult {
  mask: Float64Array;
  probs: Float64Array;
}

function convDims(unit: ConvUnit, n: number): ConvDims {
  return {
    n, cIn: unit.cIn, h: unit.h, w: unit.w, cOut: unit.cOut,
    kernel: unit.kernel, stride: unit.stride, padding: unit.padding,
  };
}

function depthwiseDims(unit: ConvUnit, n: number): DepthwiseDims {
  return {
    n, c: unit.cIn, h: unit.h, w: unit.w,
    kernel: unit.kernel, stride: unit.stride, padding: unit.padding,
  };
}

export class TrainerModel {
  /** Trainable tensors: conv/fc weights, fc biases, BN gamma/beta. */
  readonly params = new Map<string, Float64Array>();
  /** BN running statistics, updated by training forward passes. */
  readonly running = new Map<string, Float64Array>();

  constructor(seed: number) {
    const rng = new Rng(seed);
    for (const layer of LAYERS) {
      if (layer.kind === "conv" || layer.kind === "depthwise") {
        const cOut = layer.outShape[0];
        const cIn = layer.kind === "depthwise" ? 1 : layer.inShape[0];
        const fanIn = cIn * layer.kernel * layer.kernel;
        const weight = new Float64Array(
          (layer.kind === "depthwise" ? layer.inShape[0] : cOut) * cIn
          * layer.kernel * layer.kernel,
        );
        rng.fillGaussian(weight, Math.sqrt(2 / fanIn));
        this.params.set(`${layer.name}.w`, weight);
        const channels = layer.kind === "depthwise" ? layer.inShape[0] : cOut;
        this.params.set(`${layer.name}.bn.gamma`, new Float64Array(channels).fill(1));
        this.params.set(`${layer.name}.bn.beta`, new Float64Array(channels));
        this.running.set(`${layer.name}.bn.mean`, new Float64Array(channels));
        this.running.set(`${layer.name}.bn.var`, new Float64Array(channels).fill(1));
      } else if (layer.kind === "fc") {
        const inDim = layer.inShape[0];
        const outDim = layer.outShape[0];
        const weight = new Float64Array(outDim * inDim);
        const scale = layer.activation === "relu6"
          ? Math.sqrt(2 / inDim)
          : Math.sqrt(1 / inDim);
        rng.fillGaussian(weight, scale);
        this.params.set(`${layer.name}.w`, weight);
        this.params.set(`${layer.name}.b`, new Float64Array(outDim));
      }
    }
  }

  /** Training-mode forward over a [n x INPUT_SIZE] feature batch. */
  forwardTrain(x: Float64Array, n: number): { out: ForwardResult; cache: ForwardCache } {
    if (x.length !== n * INPUT_SIZE) {
      throw new Error(`feature batch holds ${x.length} values, expected ${n * INPUT_SIZE}`);
    }
    const units: UnitCache[] = [];
    const first = CONV_UNITS[0];
    let cur = smToCm(x, n, first.cIn, first.h * first.w);
    for (const unit of CONV_UNITS) {
      const weight = this.params.get(`${unit.name}.w`)!;
      const convOut = unit.kind === "conv"
        ? conv2dForwardCm(cur, convDims(unit, n), weight)
        : depthwiseForwardCm(cur, depthwiseDims(unit, n), weight);
      const channels = unit.cOut;
      const hw = unit.ho * unit.wo;
      const gamma = this.params.get(`${unit.name}.bn.gamma`)!;
      const beta = this.params.get(`${unit.name}.bn.beta`)!;
      const { out: bnOut, cache: bn } = batchNormTrainForwardCm(
        convOut, n, channels, hw, gamma, beta,
      );
      this.updateRunning(unit.name, bn.mean, bn.variance);
      units.push({ convIn: cur, bnOut, bn });
      cur = unit.activation === "relu6" ? relu6Forward(bnOut) : bnOut;
    }
    return this.headsForward(cur, n, units);
  }

  /** Inference-mode forward using BN running statistics. */
  forwardEval(x: Float64Array, n: number): ForwardResult {
    if (x.length !== n * INPUT_SIZE) {
      throw new Error(`feature batch holds ${x.length} values, expected ${n * INPUT_SIZE}`);
    }
    const first = CONV_UNITS[0];
    let cur = smToCm(x, n, first.cIn, first.h * first.w);
    for (const unit of CONV_UNITS) {
      const weight = this.params.get(`${unit.name}.w`)!;
      const convOut = unit.kind === "conv"
        ? conv2dForwardCm(cur, convDims(unit, n), weight)
        : depthwiseForwardCm(cur, depthwiseDims(unit, n), weight);
      const bnOut = batchNormEvalForwardCm(
        convOut, n, unit.cOut, unit.ho * unit.wo,
        this.params.get(`${unit.name}.bn.gamma`)!,
        this.params.get(`${unit.name}.bn.beta`)!,
        this.running.get(`${unit.name}.bn.mean`)!,
        this.running.get(`${unit.name}.bn.var`)!,
      );
      cur = unit.activation === "relu6" ? relu6Forward(bnOut) : bnOut;
    }
    return this.headsForward(cur, n, null).out;
  }

  private headsForward(
    trunk: Float64Array, n: number, units: UnitCache[] | null,
  ): { out: ForwardResult; cache: ForwardCache } {
    const pooled = globalPoolForwardCm(trunk, n, TRUNK_C, TRUNK_HW);
    const dtdFc1Pre = fcForward(
      pooled, n, TRUNK_C,
      this.params.get("dtd.fc1.w")!, this.params.get("dtd.fc1.b")!, EMBEDDING_DIM,
    );
    const embedding = relu6Forward(dtdFc1Pre);
    const dtdFc2Pre = fcForward(
      embedding, n, EMBEDDING_DIM,
      this.params.get("dtd.fc2.w")!, this.params.get("dtd.fc2.b")!, DTD_CLASSES,
    );
    const probs = softmaxForward(dtdFc2Pre, n, DTD_CLASSES);
    const gatePre = fcForward(
      embedding, n, EMBEDDING_DIM,
      this.params.get("gate.fc.w")!, this.params.get("gate.fc.b")!, TRUNK_C,
    );
    const gains = sigmoidForward(gatePre);
    const gated = cmToSm(
      gateForwardCm(trunk, gains, n, TRUNK_C, TRUNK_HW), n, TRUNK_C, TRUNK_HW,
    );
    const maskFc1Pre = fcForward(
      gated, n, FLAT_DIM,
      this.params.get("mask.fc1.w")!, this.params.get("mask.fc1.b")!, MASK_HIDDEN,
    );
    const maskFc1Out = relu6Forward(maskFc1Pre);
    const maskFc2Pre = fcForward(
      maskFc1Out, n, MASK_HIDDEN,
      this.params.get("mask.fc2.w")!, this.params.get("mask.fc2.b")!, MASK_BINS,
    );
    const mask = sigmoidForward(maskFc2Pre);
    const out: ForwardResult = { mask, probs };
    const cache: ForwardCache = {
      n, units: units ?? [], trunk, pooled, dtdFc1Pre, embedding, probs,
      gains, gated, maskFc1Pre, maskFc1Out, mask,
    };
    return { out, cache };
  }

  /** Gradients of a scalar loss given its mask and posterior gradients. */
  backward(
    dMask: Float64Array, dProbs: Float64Array, cache: ForwardCache,
  ): Map<string, Float64Array> {
    const grads = new Map<string, Float64Array>();
    const n = cache.n;

    // Mask head back to the gated trunk.
    const dMaskFc2Pre = sigmoidBackward(dMask, cache.mask);
    const maskFc2 = fcBackward(
      dMaskFc2Pre, cache.maskFc1Out, n, MASK_HIDDEN,
      this.params.get("mask.fc2.w")!, MASK_BINS,
    );
    grads.set("mask.fc2.w", maskFc2.dw);
    grads.set("mask.fc2.b", maskFc2.db);
    const dMaskFc1Pre = relu6Backward(maskFc2.dx, cache.maskFc1Pre);
    const maskFc1 = fcBackward(
      dMaskFc1Pre, cache.gated, n, FLAT_DIM,
      this.params.get("mask.fc1.w")!, MASK_HIDDEN,
    );
    grads.set("mask.fc1.w", maskFc1.dw);
    grads.set("mask.fc1.b", maskFc1.db);

    // Gate: gradient splits into the trunk and the gain vector.
    const dGatedCm = smToCm(maskFc1.dx, n, TRUNK_C, TRUNK_HW);
    const gate = gateBackwardCm(dGatedCm, cache.trunk, cache.gains, n, TRUNK_C, TRUNK_HW);
    const dGatePre = sigmoidBackward(gate.dGains, cache.gains);
    const gateFc = fcBackward(
      dGatePre, cache.embedding, n, EMBEDDING_DIM,
      this.params.get("gate.fc.w")!, TRUNK_C,
    );
    grads.set("gate.fc.w", gateFc.dw);
    grads.set("gate.fc.b", gateFc.db);

    // Classifier head back to the embedding.
    const dDtdFc2Pre = softmaxBackward(dProbs, cache.probs, n, DTD_CLASSES);
    const dtdFc2 = fcBackward(
      dDtdFc2Pre, cache.embedding, n, EMBEDDING_DIM,
      this.params.get("dtd.fc2.w")!, DTD_CLASSES,
    );
    grads.set("dtd.fc2.w", dtdFc2.dw);
    grads.set("dtd.fc2.b", dtdFc2.db);

    // The embedding feeds both heads; the trunk feeds both pool and gate.
    const dEmbedding = new Float64Array(n * EMBEDDING_DIM);
    for (let i = 0; i < dEmbedding.length; i++) {
      dEmbedding[i] = gateFc.dx[i] + dtdFc2.dx[i];
    }
    const dDtdFc1Pre = relu6Backward(dEmbedding, cache.dtdFc1Pre);
    const dtdFc1 = fcBackward(
      dDtdFc1Pre, cache.pooled, n, TRUNK_C,
      this.params.get("dtd.fc1.w")!, EMBEDDING_DIM,
    );
    grads.set("dtd.fc1.w", dtdFc1.dw);
    grads.set("dtd.fc1.b", dtdFc1.db);
    const dTrunkFromPool = globalPoolBackwardCm(dtdFc1.dx, n, TRUNK_C, TRUNK_HW);
    let dCur: Float64Array = new Float64Array(n * TRUNK_C * TRUNK_HW);
    for (let i = 0; i < dCur.length; i++) {
      dCur[i] = gate.dx[i] + dTrunkFromPool[i];
    }

    // Trunk, in reverse table order.
    for (let u = CONV_UNITS.length - 1; u >= 0; u--) {
      const unit = CONV_UNITS[u];
      const unitCache = cache.units[u];
      const hw = unit.ho * unit.wo;
      const dBnOut = unit.activation === "relu6"
        ? relu6Backward(dCur, unitCache.bnOut)
        : dCur;
      const bn = batchNormBackwardCm(
        dBnOut, unitCache.bn, n, unit.cOut, hw,
        this.params.get(`${unit.name}.bn.gamma`)!,
      );
      grads.set(`${unit.name}.bn.gamma`, bn.dGamma);
      grads.set(`${unit.name}.bn.beta`, bn.dBeta);
      const weight = this.params.get(`${unit.name}.w`)!;
      if (unit.kind === "conv") {
        // The first unit's input gradient would only flow into the fixed
        // feature tensor, so skip computing it.
        const conv = conv2dBackwardCm(bn.dx, unitCache.convIn, convDims(unit, n), weight, u > 0);
        grads.set(`${unit.name}.w`, conv.dw);
        dCur = conv.dx;
      } else {
        const conv = depthwiseBackwardCm(
          bn.dx, unitCache.convIn, depthwiseDims(unit, n), weight,
        );
        grads.set(`${unit.name}.w`, conv.dw);
        dCur = conv.dx;
      }
    }
    return grads;
  }

  private updateRunning(name: string, mean: Float64Array, variance: Float64Array): void {
    const rMean = this.running.get(`${name}.bn.mean`)!;
    const rVar = this.running.get(`${name}.bn.var`)!;
    for (let i = 0; i < rMean.length; i++) {
      rMean[i] = (1 - BN_MOMENTUM) * rMean[i] + BN_MOMENTUM * mean[i];
      rVar[i] = (1 - BN_MOMENTUM) * rVar[i] + BN_MOMENTUM * variance[i];
    }
  }

  /** Runtime-format tensors with batch norms folded into conv weights.
   *
   * Returns `name -> values` in the runtime's table order, every value
   * rounded to f32 — exactly what the weight file will hold. The input
   * normalizer exports as identity. Throws if any tensor's size drifts
   * from the architecture's expectation.
   */
  foldTensors(): Map<string, Float64Array> {
    const eps = 1e-5;
    const folded = new Map<string, Float64Array>();
    for (const unit of CONV_UNITS) {
      const weight = this.params.get(`${unit.name}.w`)!;
      const gamma = this.params.get(`${unit.name}.bn.gamma`)!;
      const beta = this.params.get(`${unit.name}.bn.beta`)!;
      const mean = this.running.get(`${unit.name}.bn.mean`)!;
      const variance = this.running.get(`${unit.name}.bn.var`)!;
      const channels = gamma.length;
      const perChannel = weight.length / channels;
      const w = new Float64Array(weight.length);
      const b = new Float64Array(channels);
      for (let ch = 0; ch < channels; ch++) {
        const scale = gamma[ch] / Math.sqrt(variance[ch] + eps);
        const base = ch * perChannel;
        for (let i = 0; i < perChannel; i++) {
          w[base + i] = Math.fround(weight[base + i] * scale);
        }
        b[ch] = Math.fround(beta[ch] - mean[ch] * scale);
      }
      folded.set(`${unit.name}.w`, w);
      folded.set(`${unit.name}.b`, b);
    }
    for (const fc of FC_UNITS) {
      const w = Float64Array.from(this.params.get(`${fc.name}.w`)!, Math.fround);
      const b = Float64Array.from(this.params.get(`${fc.name}.b`)!, Math.fround);
      folded.set(`${fc.name}.w`, w);
      folded.set(`${fc.name}.b`, b);
    }
    folded.set("feat_norm.scale", new Float64Array(INPUT_SIZE).fill(1));
    folded.set("feat_norm.offset", new Float64Array(INPUT_SIZE));

    const ordered = new Map<string, Float64Array>();
    for (const [name, shape] of weightShapes()) {
      const tensor = folded.get(name);
      if (tensor === undefined) throw new Error(`fold produced no tensor named ${name}`);
      const size = shape.reduce((a, c) => a * c, 1);
      if (tensor.length !== size) {
        throw new Error(
          `${name}: folded size ${tensor.length} does not match architecture size ${size}`,
        );
      }
      ordered.set(name, tensor);
    }
    return ordered;
  }
}

/** Forward pass through folded runtime-format tensors.
 *
 * Mirrors the inference runtime's semantics — input normalizer, biased
 * convolutions, activations per the architecture table — so a folded
 * model can be checked against the runtime bit for bit.
 */
export function foldedForward(
  tensors: Map<string, Float64Array>, x: Float64Array, n: number,
): ForwardResult {
  if (x.length !== n * INPUT_SIZE) {
    throw new Error(`feature batch holds ${x.length} values, expected ${n * INPUT_SIZE}`);
  }
  const scale = tensors.get("feat_norm.scale")!;
  const offset = tensors.get("feat_norm.offset")!;
  let cur: Float64Array = new Float64Array(x.length);
  for (let s = 0; s < n; s++) {
    const base = s * INPUT_SIZE;
    for (let i = 0; i < INPUT_SIZE; i++) {
      cur[base + i] = x[base + i] * scale[i] + offset[i];
    }
  }
  for (const unit of CONV_UNITS) {
    const weight = tensors.get(`${unit.name}.w`)!;
    const bias = tensors.get(`${unit.name}.b`)!;
    const convOut = unit.kind === "conv"
      ? conv2dForward(cur, convDims(unit, n), weight, bias).out
      : depthwiseForward(cur, depthwiseDims(unit, n), weight, bias).out;
    cur = unit.activation === "relu6" ? relu6Forward(convOut) : convOut;
  }
  const pooled = globalPoolForward(cur, n, TRUNK_C, TRUNK_HW);
  const embedding = relu6Forward(fcForward(
    pooled, n, TRUNK_C, tensors.get("dtd.fc1.w")!, tensors.get("dtd.fc1.b")!,
    EMBEDDING_DIM,
  ));
  const probs = softmaxForward(fcForward(
    embedding, n, EMBEDDING_DIM, tensors.get("dtd.fc2.w")!, tensors.get("dtd.fc2.b")!,
    DTD_CLASSES,
  ), n, DTD_CLASSES);
  const gains = sigmoidForward(fcForward(
    embedding, n, EMBEDDING_DIM, tensors.get("gate.fc.w")!, tensors.get("gate.fc.b")!,
    TRUNK_C,
  ));
  const gated = gateForward(cur, gains, n, TRUNK_C, TRUNK_HW);
  const hidden = relu6Forward(fcForward(
    gated, n, FLAT_DIM, tensors.get("mask.fc1.w")!, tensors.get("mask.fc1.b")!,
    MASK_HIDDEN,
  ));
  const mask = sigmoidForward(fcForward(
    hidden, n, MASK_HIDDEN, tensors.get("mask.fc2.w")!, tensors.get("mask.fc2.b")!,
    MASK_BINS,
  ));
  return { mask, probs };
}
