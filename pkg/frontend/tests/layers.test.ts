import { describe, expect, it } from "vitest";

import { DTD_CLASSES, INPUT_SIZE, MASK_BINS } from "../src/arch.js";
import {
  batchNormBackward, batchNormBackwardCm, batchNormTrainForward,
  batchNormTrainForwardCm, cmToSm, conv2dBackward, conv2dBackwardCm,
  conv2dForward, conv2dForwardCm, depthwiseBackward, depthwiseBackwardCm,
  depthwiseForward, depthwiseForwardCm, fcBackward, fcForward, gateBackward,
  gateBackwardCm, gateForward, gateForwardCm, globalPoolBackward,
  globalPoolBackwardCm, globalPoolForward, globalPoolForwardCm,
  relu6Backward, relu6Forward, sigmoidBackward, sigmoidForward,
  smToCm, softmaxBackward, softmaxForward,
} from "../src/layers.js";
import {
  batchFocalLoss, batchSuppressionLoss, combinedLoss,
} from "../src/losses.js";
import { TrainerModel } from "../src/model.js";
import { Rng } from "../src/rng.js";

function relError(a: number, b: number): number {
  return Math.abs(a - b) / Math.max(Math.abs(a), Math.abs(b), 1e-10);
}

function randomArray(rng: Rng, length: number, scale = 1): Float64Array {
  const out = new Float64Array(length);
  rng.fillGaussian(out, scale);
  return out;
}

/** Scalar probe loss: a fixed random projection of the output tensor. */
function probeLoss(out: Float64Array, probe: Float64Array): number {
  let sum = 0;
  for (let i = 0; i < out.length; i++) sum += out[i] * probe[i];
  return sum;
}

function checkGrad(
  analytic: Float64Array, evaluate: (i: number, v: number) => number,
  values: Float64Array, rng: Rng, samples: number, tol: number,
): void {
  for (let trial = 0; trial < samples; trial++) {
    const i = rng.below(values.length);
    const h = 1e-5 * Math.max(1, Math.abs(values[i]));
    const fd = (evaluate(i, values[i] + h) - evaluate(i, values[i] - h)) / (2 * h);
    expect(relError(analytic[i], fd)).toBeLessThan(tol);
  }
}

describe("convolution gradients", () => {
  it("strided padded conv matches finite differences", () => {
    const rng = new Rng(11);
    const dims = { n: 2, cIn: 3, h: 6, w: 5, cOut: 4, kernel: 3, stride: 2, padding: 1 };
    const x = randomArray(rng, dims.n * dims.cIn * dims.h * dims.w);
    const weight = randomArray(rng, dims.cOut * dims.cIn * 9, 0.5);
    const bias = randomArray(rng, dims.cOut, 0.5);
    const { out, ho, wo } = conv2dForward(x, dims, weight, bias);
    const probe = randomArray(rng, out.length);
    const { dx, dw, db } = conv2dBackward(probe, x, dims, weight, true);
    expect(out.length).toBe(dims.n * dims.cOut * ho * wo);

    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(conv2dForward(moved, dims, weight, bias).out, probe);
    }, x, rng, 12, 1e-6);
    checkGrad(dw, (i, v) => {
      const moved = weight.slice();
      moved[i] = v;
      return probeLoss(conv2dForward(x, dims, moved, bias).out, probe);
    }, weight, rng, 12, 1e-6);
    checkGrad(db!, (i, v) => {
      const moved = bias.slice();
      moved[i] = v;
      return probeLoss(conv2dForward(x, dims, weight, moved).out, probe);
    }, bias, rng, 4, 1e-6);
  });

  it("pointwise conv fast path matches finite differences", () => {
    const rng = new Rng(12);
    const dims = { n: 3, cIn: 5, h: 4, w: 3, cOut: 6, kernel: 1, stride: 1, padding: 0 };
    const x = randomArray(rng, dims.n * dims.cIn * dims.h * dims.w);
    const weight = randomArray(rng, dims.cOut * dims.cIn, 0.5);
    const { out } = conv2dForward(x, dims, weight, null);
    const probe = randomArray(rng, out.length);
    const { dx, dw } = conv2dBackward(probe, x, dims, weight, false);

    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(conv2dForward(moved, dims, weight, null).out, probe);
    }, x, rng, 12, 1e-6);
    checkGrad(dw, (i, v) => {
      const moved = weight.slice();
      moved[i] = v;
      return probeLoss(conv2dForward(x, dims, moved, null).out, probe);
    }, weight, rng, 12, 1e-6);
  });

  it("pointwise fast path agrees with the direct loop", () => {
    const rng = new Rng(13);
    const fast = { n: 2, cIn: 4, h: 3, w: 3, cOut: 5, kernel: 1, stride: 1, padding: 0 };
    // Forcing stride 2 on 1x1 input windows hits the general branch.
    const slow = { ...fast, h: 5, w: 5, stride: 2 };
    const xFast = randomArray(rng, fast.n * fast.cIn * fast.h * fast.w);
    const weight = randomArray(rng, fast.cOut * fast.cIn);
    const a = conv2dForward(xFast, fast, weight, null).out;
    // Build the equivalent strided input whose sampled grid is xFast.
    const xSlow = new Float64Array(slow.n * slow.cIn * slow.h * slow.w);
    for (let s = 0; s < slow.n; s++) {
      for (let c = 0; c < slow.cIn; c++) {
        for (let i = 0; i < fast.h; i++) {
          for (let j = 0; j < fast.w; j++) {
            xSlow[((s * slow.cIn + c) * slow.h + 2 * i) * slow.w + 2 * j] =
              xFast[((s * fast.cIn + c) * fast.h + i) * fast.w + j];
          }
        }
      }
    }
    const b = conv2dForward(xSlow, slow, weight, null).out;
    for (let i = 0; i < a.length; i++) expect(b[i]).toBeCloseTo(a[i], 12);
  });

  it("depthwise conv matches finite differences", () => {
    const rng = new Rng(14);
    const dims = { n: 2, c: 4, h: 5, w: 4, kernel: 3, stride: 2, padding: 1 };
    const x = randomArray(rng, dims.n * dims.c * dims.h * dims.w);
    const weight = randomArray(rng, dims.c * 9, 0.5);
    const bias = randomArray(rng, dims.c, 0.5);
    const { out } = depthwiseForward(x, dims, weight, bias);
    const probe = randomArray(rng, out.length);
    const { dx, dw, db } = depthwiseBackward(probe, x, dims, weight, true);

    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(depthwiseForward(moved, dims, weight, bias).out, probe);
    }, x, rng, 12, 1e-6);
    checkGrad(dw, (i, v) => {
      const moved = weight.slice();
      moved[i] = v;
      return probeLoss(depthwiseForward(x, dims, moved, bias).out, probe);
    }, weight, rng, 12, 1e-6);
    checkGrad(db!, (i, v) => {
      const moved = bias.slice();
      moved[i] = v;
      return probeLoss(depthwiseForward(x, dims, weight, moved).out, probe);
    }, bias, rng, 4, 1e-6);
  });
});

describe("dense and normalization gradients", () => {
  it("fully connected matches finite differences", () => {
    const rng = new Rng(21);
    const n = 3;
    const inDim = 7;
    const outDim = 5;
    const x = randomArray(rng, n * inDim);
    const weight = randomArray(rng, outDim * inDim, 0.5);
    const bias = randomArray(rng, outDim, 0.5);
    const out = fcForward(x, n, inDim, weight, bias, outDim);
    const probe = randomArray(rng, out.length);
    const { dx, dw, db } = fcBackward(probe, x, n, inDim, weight, outDim);

    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(fcForward(moved, n, inDim, weight, bias, outDim), probe);
    }, x, rng, 10, 1e-6);
    checkGrad(dw, (i, v) => {
      const moved = weight.slice();
      moved[i] = v;
      return probeLoss(fcForward(x, n, inDim, moved, bias, outDim), probe);
    }, weight, rng, 10, 1e-6);
    checkGrad(db, (i, v) => {
      const moved = bias.slice();
      moved[i] = v;
      return probeLoss(fcForward(x, n, inDim, weight, moved, outDim), probe);
    }, bias, rng, 5, 1e-6);
  });

  it("batch norm training pass matches finite differences", () => {
    const rng = new Rng(22);
    const n = 4;
    const c = 3;
    const hw = 6;
    const x = randomArray(rng, n * c * hw, 2);
    const gamma = randomArray(rng, c, 0.5);
    const beta = randomArray(rng, c, 0.5);
    const loss = (xv: Float64Array, g: Float64Array, b: Float64Array, probe: Float64Array) =>
      probeLoss(batchNormTrainForward(xv, n, c, hw, g, b).out, probe);
    const { out, cache } = batchNormTrainForward(x, n, c, hw, gamma, beta);
    const probe = randomArray(rng, out.length);
    const { dx, dGamma, dBeta } = batchNormBackward(probe, cache, n, c, hw, gamma);

    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return loss(moved, gamma, beta, probe);
    }, x, rng, 15, 1e-5);
    checkGrad(dGamma, (i, v) => {
      const moved = gamma.slice();
      moved[i] = v;
      return loss(x, moved, beta, probe);
    }, gamma, rng, 3, 1e-6);
    checkGrad(dBeta, (i, v) => {
      const moved = beta.slice();
      moved[i] = v;
      return loss(x, gamma, moved, probe);
    }, beta, rng, 3, 1e-6);
  });

  it("normalizes each channel to zero mean and unit variance", () => {
    const rng = new Rng(23);
    const n = 5;
    const c = 2;
    const hw = 10;
    const x = randomArray(rng, n * c * hw, 3);
    const gamma = new Float64Array(c).fill(1);
    const beta = new Float64Array(c);
    const { out } = batchNormTrainForward(x, n, c, hw, gamma, beta);
    for (let ch = 0; ch < c; ch++) {
      let mean = 0;
      let sq = 0;
      for (let s = 0; s < n; s++) {
        for (let i = 0; i < hw; i++) {
          const v = out[(s * c + ch) * hw + i];
          mean += v;
          sq += v * v;
        }
      }
      mean /= n * hw;
      sq /= n * hw;
      expect(Math.abs(mean)).toBeLessThan(1e-10);
      expect(sq - mean * mean).toBeCloseTo(1, 3);
    }
  });
});

describe("activation and reduction gradients", () => {
  it("softmax backward matches finite differences", () => {
    const rng = new Rng(31);
    const n = 4;
    const dim = 3;
    const x = randomArray(rng, n * dim, 2);
    const probs = softmaxForward(x, n, dim);
    const probe = randomArray(rng, probs.length);
    const dx = softmaxBackward(probe, probs, n, dim);
    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(softmaxForward(moved, n, dim), probe);
    }, x, rng, 12, 1e-6);
    for (let s = 0; s < n; s++) {
      let sum = 0;
      for (let c = 0; c < dim; c++) sum += probs[s * dim + c];
      expect(sum).toBeCloseTo(1, 12);
    }
  });

  it("relu6 clamps and gates gradients at both knees", () => {
    const x = Float64Array.from([-1, 0.5, 3, 6.5, 7]);
    expect([...relu6Forward(x)]).toEqual([0, 0.5, 3, 6, 6]);
    const dy = Float64Array.from([1, 1, 1, 1, 1]);
    expect([...relu6Backward(dy, x)]).toEqual([0, 1, 1, 0, 0]);
  });

  it("sigmoid gradient matches finite differences", () => {
    const rng = new Rng(32);
    const x = randomArray(rng, 20, 2);
    const out = sigmoidForward(x);
    const probe = randomArray(rng, x.length);
    const dx = sigmoidBackward(probe, out);
    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(sigmoidForward(moved), probe);
    }, x, rng, 10, 1e-6);
  });

  it("global pool and gate gradients match finite differences", () => {
    const rng = new Rng(33);
    const n = 2;
    const c = 3;
    const hw = 5;
    const x = randomArray(rng, n * c * hw);
    const gains = randomArray(rng, n * c, 0.5);
    const pooled = globalPoolForward(x, n, c, hw);
    expect(pooled).toHaveLength(n * c);
    const poolProbe = randomArray(rng, pooled.length);
    const dxPool = globalPoolBackward(poolProbe, n, c, hw);
    checkGrad(dxPool, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(globalPoolForward(moved, n, c, hw), poolProbe);
    }, x, rng, 8, 1e-6);

    const gated = gateForward(x, gains, n, c, hw);
    const gateProbe = randomArray(rng, gated.length);
    const { dx, dGains } = gateBackward(gateProbe, x, gains, n, c, hw);
    checkGrad(dx, (i, v) => {
      const moved = x.slice();
      moved[i] = v;
      return probeLoss(gateForward(moved, gains, n, c, hw), gateProbe);
    }, x, rng, 8, 1e-6);
    checkGrad(dGains, (i, v) => {
      const moved = gains.slice();
      moved[i] = v;
      return probeLoss(gateForward(x, moved, n, c, hw), gateProbe);
    }, gains, rng, 6, 1e-6);
  });
});

describe("whole-model backpropagation", () => {
  it("training loss gradient matches finite differences end to end", () => {
    const batch = 3;
    const rng = new Rng(42);
    const features = randomArray(rng, batch * INPUT_SIZE, 1);
    const gTrue = new Float64Array(batch * MASK_BINS);
    for (let i = 0; i < gTrue.length; i++) gTrue[i] = rng.uniform();
    const labels = Uint8Array.from({ length: batch }, () => rng.below(DTD_CLASSES));
    const logVars = Float64Array.from([0.2, -0.3]);

    const model = new TrainerModel(7);
    const evaluate = (): number => {
      const { out } = model.forwardTrain(features, batch);
      const mask = batchSuppressionLoss(gTrue, out.mask, batch, MASK_BINS, 0.5);
      const dtd = batchFocalLoss(out.probs, labels, batch, DTD_CLASSES, 2);
      return combinedLoss([mask.loss, dtd.loss], logVars).total;
    };

    const { out, cache } = model.forwardTrain(features, batch);
    const mask = batchSuppressionLoss(gTrue, out.mask, batch, MASK_BINS, 0.5);
    const dtd = batchFocalLoss(out.probs, labels, batch, DTD_CLASSES, 2);
    const combined = combinedLoss([mask.loss, dtd.loss], logVars);
    const dMask = mask.grad;
    for (let i = 0; i < dMask.length; i++) dMask[i] *= combined.dLosses[0];
    const dProbs = dtd.dProbs;
    for (let i = 0; i < dProbs.length; i++) dProbs[i] *= combined.dLosses[1];
    const grads = model.backward(dMask, dProbs, cache);

    const names = [...grads.keys()];
    expect(new Set(names)).toEqual(new Set(model.params.keys()));
    let checked = 0;
    for (let trial = 0; trial < 60; trial++) {
      const name = names[rng.below(names.length)];
      const tensor = model.params.get(name)!;
      const grad = grads.get(name)!;
      const i = rng.below(tensor.length);
      // Skip coordinates with negligible gradient flow; their finite
      // differences drown in roundoff.
      if (Math.abs(grad[i]) < 1e-7) continue;
      const saved = tensor[i];
      const h = 1e-4 * Math.max(0.01, Math.abs(saved));
      tensor[i] = saved + h;
      const up = evaluate();
      tensor[i] = saved - h;
      const down = evaluate();
      tensor[i] = saved;
      const fd = (up - down) / (2 * h);
      expect(relError(grad[i], fd), `${name}[${i}]`).toBeLessThan(2e-3);
      checked += 1;
    }
    expect(checked).toBeGreaterThan(30);
  });
});

describe("channel-major variants", () => {
  const rng = new Rng(99);

  function expectClose(a: Float64Array, b: Float64Array, tol = 1e-12) {
    expect(a.length).toBe(b.length);
    let worst = 0;
    for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
    expect(worst).toBeLessThanOrEqual(tol);
  }

  it("layout transposes invert each other", () => {
    const x = randomArray(rng, 3 * 5 * 7);
    expectClose(cmToSm(smToCm(x, 3, 5, 7), 3, 5, 7), x, 0);
  });

  it("convolution matches the sample-major reference", () => {
    for (const dims of [
      { n: 3, cIn: 2, h: 8, w: 6, cOut: 5, kernel: 3, stride: 2, padding: 1 },
      { n: 2, cIn: 4, h: 5, w: 4, cOut: 6, kernel: 1, stride: 1, padding: 0 },
    ]) {
      const hwIn = dims.h * dims.w;
      const ho = Math.floor((dims.h + 2 * dims.padding - dims.kernel) / dims.stride) + 1;
      const wo = Math.floor((dims.w + 2 * dims.padding - dims.kernel) / dims.stride) + 1;
      const x = randomArray(rng, dims.n * dims.cIn * hwIn);
      const w = randomArray(rng, dims.cOut * dims.cIn * dims.kernel * dims.kernel);
      const ref = conv2dForward(x, dims, w, null).out;
      const cm = conv2dForwardCm(smToCm(x, dims.n, dims.cIn, hwIn), dims, w);
      expectClose(cmToSm(cm, dims.n, dims.cOut, ho * wo), ref);

      const dy = randomArray(rng, ref.length);
      const refBack = conv2dBackward(dy, x, dims, w, false);
      const cmBack = conv2dBackwardCm(
        smToCm(dy, dims.n, dims.cOut, ho * wo), smToCm(x, dims.n, dims.cIn, hwIn), dims, w,
      );
      expectClose(cmToSm(cmBack.dx, dims.n, dims.cIn, hwIn), refBack.dx);
      expectClose(cmBack.dw, refBack.dw);
    }
  });

  it("depthwise matches the sample-major reference", () => {
    const dims = { n: 3, c: 4, h: 7, w: 5, kernel: 3, stride: 1, padding: 1 };
    const hw = dims.h * dims.w;
    const x = randomArray(rng, dims.n * dims.c * hw);
    const w = randomArray(rng, dims.c * dims.kernel * dims.kernel);
    const ref = depthwiseForward(x, dims, w, null).out;
    const cm = depthwiseForwardCm(smToCm(x, dims.n, dims.c, hw), dims, w);
    expectClose(cmToSm(cm, dims.n, dims.c, hw), ref);

    const dy = randomArray(rng, ref.length);
    const refBack = depthwiseBackward(dy, x, dims, w, false);
    const cmBack = depthwiseBackwardCm(
      smToCm(dy, dims.n, dims.c, hw), smToCm(x, dims.n, dims.c, hw), dims, w,
    );
    expectClose(cmToSm(cmBack.dx, dims.n, dims.c, hw), refBack.dx);
    expectClose(cmBack.dw, refBack.dw);
  });

  it("batch norm matches the sample-major reference", () => {
    const n = 4, c = 3, hw = 11;
    const x = randomArray(rng, n * c * hw, 2);
    const gamma = randomArray(rng, c);
    const beta = randomArray(rng, c);
    const ref = batchNormTrainForward(x, n, c, hw, gamma, beta);
    const xcm = smToCm(x, n, c, hw);
    const cm = batchNormTrainForwardCm(xcm, n, c, hw, gamma, beta);
    expectClose(cmToSm(cm.out, n, c, hw), ref.out, 1e-10);
    expectClose(cm.cache.mean, ref.cache.mean, 1e-12);
    expectClose(cm.cache.variance, ref.cache.variance, 1e-12);

    const dy = randomArray(rng, x.length);
    const refBack = batchNormBackward(dy, ref.cache, n, c, hw, gamma);
    const cmBack = batchNormBackwardCm(smToCm(dy, n, c, hw), cm.cache, n, c, hw, gamma);
    expectClose(cmToSm(cmBack.dx, n, c, hw), refBack.dx, 1e-10);
    expectClose(cmBack.dGamma, refBack.dGamma, 1e-10);
    expectClose(cmBack.dBeta, refBack.dBeta, 1e-10);
  });

  it("pool and gate match the sample-major reference", () => {
    const n = 3, c = 5, hw = 9;
    const x = randomArray(rng, n * c * hw);
    const xcm = smToCm(x, n, c, hw);
    expectClose(globalPoolForwardCm(xcm, n, c, hw), globalPoolForward(x, n, c, hw), 1e-12);
    const dPooled = randomArray(rng, n * c);
    expectClose(
      cmToSm(globalPoolBackwardCm(dPooled, n, c, hw), n, c, hw),
      globalPoolBackward(dPooled, n, c, hw),
    );

    const gains = randomArray(rng, n * c);
    expectClose(
      cmToSm(gateForwardCm(xcm, gains, n, c, hw), n, c, hw),
      gateForward(x, gains, n, c, hw),
    );
    const dy = randomArray(rng, x.length);
    const refGate = gateBackward(dy, x, gains, n, c, hw);
    const cmGate = gateBackwardCm(smToCm(dy, n, c, hw), xcm, gains, n, c, hw);
    expectClose(cmToSm(cmGate.dx, n, c, hw), refGate.dx);
    expectClose(cmGate.dGains, refGate.dGains, 1e-12);
  });
});
