/** Dense layer primitives on flat Float64Arrays.
 *
 * All tensors are row-major (C-order) views: a batched image tensor is
 * [n][c][h][w] flattened, a matrix is [rows][cols]. Forward functions
 * allocate and return their outputs; backward functions return gradients
 * shaped like the corresponding forward inputs. Everything runs in double
 * precision — the weight exporter narrows to f32 at the very end.
 */

// ---------------------------------------------------------------------------
// Matmul kernels (accumulating). A is [m x n], row-major throughout.
// The saxpy-style kernels process eight k-rows per sweep: the C row is
// read and written once per eight multiply-adds instead of once per one,
// which is worth ~3x here since the store/reload chain, not arithmetic,
// bounds a scalar JS inner loop.

/** C[m x p] += A[m x n] @ B[n x p]. */
function matmulAcc(
  a: Float64Array, b: Float64Array, c: Float64Array,
  m: number, n: number, p: number,
  aOff = 0, bOff = 0, cOff = 0,
): void {
  for (let i = 0; i < m; i++) {
    const ar = aOff + i * n;
    const cr = cOff + i * p;
    let k = 0;
    for (; k + 7 < n; k += 8) {
      const a0 = a[ar + k], a1 = a[ar + k + 1], a2 = a[ar + k + 2], a3 = a[ar + k + 3];
      const a4 = a[ar + k + 4], a5 = a[ar + k + 5], a6 = a[ar + k + 6], a7 = a[ar + k + 7];
      const b0 = bOff + k * p, b1 = b0 + p, b2 = b1 + p, b3 = b2 + p;
      const b4 = b3 + p, b5 = b4 + p, b6 = b5 + p, b7 = b6 + p;
      for (let j = 0; j < p; j++) {
        c[cr + j] += a0 * b[b0 + j] + a1 * b[b1 + j] + a2 * b[b2 + j] + a3 * b[b3 + j]
          + a4 * b[b4 + j] + a5 * b[b5 + j] + a6 * b[b6 + j] + a7 * b[b7 + j];
      }
    }
    for (; k < n; k++) {
      const av = a[ar + k];
      const br = bOff + k * p;
      for (let j = 0; j < p; j++) c[cr + j] += av * b[br + j];
    }
  }
}

/** C[m x p] += A[m x n] @ B[p x n]^T. */
function matmulABtAcc(
  a: Float64Array, b: Float64Array, c: Float64Array,
  m: number, n: number, p: number,
  aOff = 0, bOff = 0, cOff = 0,
): void {
  for (let i = 0; i < m; i++) {
    const ar = aOff + i * n;
    const cr = cOff + i * p;
    for (let j = 0; j < p; j++) {
      const br = bOff + j * n;
      let s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      let k = 0;
      for (; k + 3 < n; k += 4) {
        s0 += a[ar + k] * b[br + k];
        s1 += a[ar + k + 1] * b[br + k + 1];
        s2 += a[ar + k + 2] * b[br + k + 2];
        s3 += a[ar + k + 3] * b[br + k + 3];
      }
      for (; k < n; k++) s0 += a[ar + k] * b[br + k];
      c[cr + j] += s0 + s1 + s2 + s3;
    }
  }
}

/** C[n x p] += A[m x n]^T @ B[m x p]. */
function matmulAtBAcc(
  a: Float64Array, b: Float64Array, c: Float64Array,
  m: number, n: number, p: number,
  aOff = 0, bOff = 0, cOff = 0,
): void {
  for (let i = 0; i < n; i++) {
    const cr = cOff + i * p;
    let k = 0;
    for (; k + 7 < m; k += 8) {
      const ar = aOff + k * n + i;
      const a0 = a[ar], a1 = a[ar + n], a2 = a[ar + 2 * n], a3 = a[ar + 3 * n];
      const a4 = a[ar + 4 * n], a5 = a[ar + 5 * n], a6 = a[ar + 6 * n], a7 = a[ar + 7 * n];
      const b0 = bOff + k * p, b1 = b0 + p, b2 = b1 + p, b3 = b2 + p;
      const b4 = b3 + p, b5 = b4 + p, b6 = b5 + p, b7 = b6 + p;
      for (let j = 0; j < p; j++) {
        c[cr + j] += a0 * b[b0 + j] + a1 * b[b1 + j] + a2 * b[b2 + j] + a3 * b[b3 + j]
          + a4 * b[b4 + j] + a5 * b[b5 + j] + a6 * b[b6 + j] + a7 * b[b7 + j];
      }
    }
    for (; k < m; k++) {
      const av = a[aOff + k * n + i];
      const br = bOff + k * p;
      for (let j = 0; j < p; j++) c[cr + j] += av * b[br + j];
    }
  }
}

export function convOutSize(size: number, kernel: number, stride: number, padding: number): number {
  return Math.floor((size + 2 * padding - kernel) / stride) + 1;
}

// ---------------------------------------------------------------------------
// Standard convolution (cross-correlation), weight [cOut, cIn, k, k].

export interface ConvDims {
  n: number; cIn: number; h: number; w: number;
  cOut: number; kernel: number; stride: number; padding: number;
}

export function conv2dForward(
  x: Float64Array, d: ConvDims, weight: Float64Array, bias: Float64Array | null,
): { out: Float64Array; ho: number; wo: number } {
  const { n, cIn, h, w, cOut, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const out = new Float64Array(n * cOut * ho * wo);
  const inPlane = h * w;
  const outPlane = ho * wo;

  if (kernel === 1 && stride === 1 && padding === 0) {
    for (let s = 0; s < n; s++) {
      matmulAcc(weight, x, out, cOut, cIn, inPlane, 0, s * cIn * inPlane, s * cOut * outPlane);
    }
  } else {
    for (let s = 0; s < n; s++) {
      const xBase = s * cIn * inPlane;
      const oBase = s * cOut * outPlane;
      for (let co = 0; co < cOut; co++) {
        const wBase = co * cIn * kernel * kernel;
        const oPlane = oBase + co * outPlane;
        for (let oi = 0; oi < ho; oi++) {
          for (let oj = 0; oj < wo; oj++) {
            let sum = 0;
            for (let ci = 0; ci < cIn; ci++) {
              const xPlane = xBase + ci * inPlane;
              const wPlane = wBase + ci * kernel * kernel;
              for (let ki = 0; ki < kernel; ki++) {
                const ii = oi * stride - padding + ki;
                if (ii < 0 || ii >= h) continue;
                for (let kj = 0; kj < kernel; kj++) {
                  const jj = oj * stride - padding + kj;
                  if (jj < 0 || jj >= w) continue;
                  sum += weight[wPlane + ki * kernel + kj] * x[xPlane + ii * w + jj];
                }
              }
            }
            out[oPlane + oi * wo + oj] = sum;
          }
        }
      }
    }
  }

  if (bias !== null) {
    for (let s = 0; s < n; s++) {
      for (let co = 0; co < cOut; co++) {
        const b = bias[co];
        const base = (s * cOut + co) * outPlane;
        for (let i = 0; i < outPlane; i++) out[base + i] += b;
      }
    }
  }
  return { out, ho, wo };
}

export function conv2dBackward(
  dy: Float64Array, x: Float64Array, d: ConvDims, weight: Float64Array,
  withBias: boolean,
): { dx: Float64Array; dw: Float64Array; db: Float64Array | null } {
  const { n, cIn, h, w, cOut, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const inPlane = h * w;
  const outPlane = ho * wo;
  const dx = new Float64Array(n * cIn * inPlane);
  const dw = new Float64Array(weight.length);
  const db = withBias ? new Float64Array(cOut) : null;

  if (kernel === 1 && stride === 1 && padding === 0) {
    for (let s = 0; s < n; s++) {
      const dyBase = s * cOut * outPlane;
      const xBase = s * cIn * inPlane;
      // dX = W^T @ dY, dW += dY @ X^T
      matmulAtBAcc(weight, dy, dx, cOut, cIn, outPlane, 0, dyBase, xBase);
      matmulABtAcc(dy, x, dw, cOut, outPlane, cIn, dyBase, xBase, 0);
    }
  } else {
    for (let s = 0; s < n; s++) {
      const xBase = s * cIn * inPlane;
      const dyBase = s * cOut * outPlane;
      for (let co = 0; co < cOut; co++) {
        const wBase = co * cIn * kernel * kernel;
        const dyPlane = dyBase + co * outPlane;
        for (let oi = 0; oi < ho; oi++) {
          for (let oj = 0; oj < wo; oj++) {
            const g = dy[dyPlane + oi * wo + oj];
            if (g === 0) continue;
            for (let ci = 0; ci < cIn; ci++) {
              const xPlane = xBase + ci * inPlane;
              const wPlane = wBase + ci * kernel * kernel;
              for (let ki = 0; ki < kernel; ki++) {
                const ii = oi * stride - padding + ki;
                if (ii < 0 || ii >= h) continue;
                for (let kj = 0; kj < kernel; kj++) {
                  const jj = oj * stride - padding + kj;
                  if (jj < 0 || jj >= w) continue;
                  dw[wPlane + ki * kernel + kj] += g * x[xPlane + ii * w + jj];
                  dx[xPlane + ii * w + jj] += g * weight[wPlane + ki * kernel + kj];
                }
              }
            }
          }
        }
      }
    }
  }

  if (db !== null) {
    for (let s = 0; s < n; s++) {
      for (let co = 0; co < cOut; co++) {
        const base = (s * cOut + co) * outPlane;
        let sum = 0;
        for (let i = 0; i < outPlane; i++) sum += dy[base + i];
        db[co] += sum;
      }
    }
  }
  return { dx, dw, db };
}

// ---------------------------------------------------------------------------
// Depthwise convolution, weight [c, 1, k, k].

export interface DepthwiseDims {
  n: number; c: number; h: number; w: number;
  kernel: number; stride: number; padding: number;
}

export function depthwiseForward(
  x: Float64Array, d: DepthwiseDims, weight: Float64Array, bias: Float64Array | null,
): { out: Float64Array; ho: number; wo: number } {
  const { n, c, h, w, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const out = new Float64Array(n * c * ho * wo);
  const inPlane = h * w;
  const outPlane = ho * wo;
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const xPlane = (s * c + ch) * inPlane;
      const oPlane = (s * c + ch) * outPlane;
      const wPlane = ch * kernel * kernel;
      const b = bias === null ? 0 : bias[ch];
      for (let oi = 0; oi < ho; oi++) {
        for (let oj = 0; oj < wo; oj++) {
          let sum = b;
          for (let ki = 0; ki < kernel; ki++) {
            const ii = oi * stride - padding + ki;
            if (ii < 0 || ii >= h) continue;
            for (let kj = 0; kj < kernel; kj++) {
              const jj = oj * stride - padding + kj;
              if (jj < 0 || jj >= w) continue;
              sum += weight[wPlane + ki * kernel + kj] * x[xPlane + ii * w + jj];
            }
          }
          out[oPlane + oi * wo + oj] = sum;
        }
      }
    }
  }
  return { out, ho, wo };
}

export function depthwiseBackward(
  dy: Float64Array, x: Float64Array, d: DepthwiseDims, weight: Float64Array,
  withBias: boolean,
): { dx: Float64Array; dw: Float64Array; db: Float64Array | null } {
  const { n, c, h, w, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const inPlane = h * w;
  const outPlane = ho * wo;
  const dx = new Float64Array(n * c * inPlane);
  const dw = new Float64Array(weight.length);
  const db = withBias ? new Float64Array(c) : null;
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const xPlane = (s * c + ch) * inPlane;
      const dyPlane = (s * c + ch) * outPlane;
      const wPlane = ch * kernel * kernel;
      for (let oi = 0; oi < ho; oi++) {
        for (let oj = 0; oj < wo; oj++) {
          const g = dy[dyPlane + oi * wo + oj];
          if (g === 0) continue;
          if (db !== null) db[ch] += g;
          for (let ki = 0; ki < kernel; ki++) {
            const ii = oi * stride - padding + ki;
            if (ii < 0 || ii >= h) continue;
            for (let kj = 0; kj < kernel; kj++) {
              const jj = oj * stride - padding + kj;
              if (jj < 0 || jj >= w) continue;
              dw[wPlane + ki * kernel + kj] += g * x[xPlane + ii * w + jj];
              dx[xPlane + ii * w + jj] += g * weight[wPlane + ki * kernel + kj];
            }
          }
        }
      }
    }
  }
  return { dx, dw, db };
}

// ---------------------------------------------------------------------------
// Fully connected, weight [outDim, inDim].

export function fcForward(
  x: Float64Array, n: number, inDim: number,
  weight: Float64Array, bias: Float64Array, outDim: number,
): Float64Array {
  const out = new Float64Array(n * outDim);
  matmulABtAcc(x, weight, out, n, inDim, outDim);
  for (let s = 0; s < n; s++) {
    const base = s * outDim;
    for (let o = 0; o < outDim; o++) out[base + o] += bias[o];
  }
  return out;
}

export function fcBackward(
  dy: Float64Array, x: Float64Array, n: number, inDim: number,
  weight: Float64Array, outDim: number,
): { dx: Float64Array; dw: Float64Array; db: Float64Array } {
  const dx = new Float64Array(n * inDim);
  const dw = new Float64Array(outDim * inDim);
  const db = new Float64Array(outDim);
  matmulAcc(dy, weight, dx, n, outDim, inDim);
  matmulAtBAcc(dy, x, dw, n, outDim, inDim);
  for (let s = 0; s < n; s++) {
    const base = s * outDim;
    for (let o = 0; o < outDim; o++) db[o] += dy[base + o];
  }
  return { dx, dw, db };
}

// ---------------------------------------------------------------------------
// Activations.

export function relu6Forward(x: Float64Array): Float64Array {
  const out = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) {
    const v = x[i];
    out[i] = v <= 0 ? 0 : v >= 6 ? 6 : v;
  }
  return out;
}

/** Gradient through relu6 given the pre-activation values. */
export function relu6Backward(dy: Float64Array, preact: Float64Array): Float64Array {
  const dx = new Float64Array(dy.length);
  for (let i = 0; i < dy.length; i++) {
    const v = preact[i];
    dx[i] = v > 0 && v < 6 ? dy[i] : 0;
  }
  return dx;
}

export function sigmoidForward(x: Float64Array): Float64Array {
  const out = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) out[i] = 1 / (1 + Math.exp(-x[i]));
  return out;
}

/** Gradient through sigmoid given the activation outputs. */
export function sigmoidBackward(dy: Float64Array, out: Float64Array): Float64Array {
  const dx = new Float64Array(dy.length);
  for (let i = 0; i < dy.length; i++) dx[i] = dy[i] * out[i] * (1 - out[i]);
  return dx;
}

/** Row-wise softmax over [n x dim], shifted by the row max for stability. */
export function softmaxForward(x: Float64Array, n: number, dim: number): Float64Array {
  const out = new Float64Array(n * dim);
  for (let s = 0; s < n; s++) {
    const base = s * dim;
    let max = -Infinity;
    for (let i = 0; i < dim; i++) max = Math.max(max, x[base + i]);
    let sum = 0;
    for (let i = 0; i < dim; i++) {
      const e = Math.exp(x[base + i] - max);
      out[base + i] = e;
      sum += e;
    }
    for (let i = 0; i < dim; i++) out[base + i] /= sum;
  }
  return out;
}

/** Gradient through softmax: dz_j = p_j * (dp_j - sum_i dp_i * p_i). */
export function softmaxBackward(
  dProbs: Float64Array, probs: Float64Array, n: number, dim: number,
): Float64Array {
  const dx = new Float64Array(n * dim);
  for (let s = 0; s < n; s++) {
    const base = s * dim;
    let dot = 0;
    for (let i = 0; i < dim; i++) dot += dProbs[base + i] * probs[base + i];
    for (let i = 0; i < dim; i++) {
      dx[base + i] = probs[base + i] * (dProbs[base + i] - dot);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis of [n, c, hw].

export const BN_EPS = 1e-5;

export interface BatchNormCache {
  xhat: Float64Array;
  invStd: Float64Array;
  mean: Float64Array;
  variance: Float64Array;
}

export function batchNormTrainForward(
  x: Float64Array, n: number, c: number, hw: number,
  gamma: Float64Array, beta: Float64Array, eps = BN_EPS,
): { out: Float64Array; cache: BatchNormCache } {
  const m = n * hw;
  const mean = new Float64Array(c);
  const variance = new Float64Array(c);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const base = (s * c + ch) * hw;
      let sum = 0;
      for (let i = 0; i < hw; i++) sum += x[base + i];
      mean[ch] += sum;
    }
  }
  for (let ch = 0; ch < c; ch++) mean[ch] /= m;
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const base = (s * c + ch) * hw;
      const mu = mean[ch];
      let sum = 0;
      for (let i = 0; i < hw; i++) {
        const d = x[base + i] - mu;
        sum += d * d;
      }
      variance[ch] += sum;
    }
  }
  for (let ch = 0; ch < c; ch++) variance[ch] /= m;

  const invStd = new Float64Array(c);
  for (let ch = 0; ch < c; ch++) invStd[ch] = 1 / Math.sqrt(variance[ch] + eps);

  const xhat = new Float64Array(x.length);
  const out = new Float64Array(x.length);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const base = (s * c + ch) * hw;
      const mu = mean[ch];
      const is = invStd[ch];
      const g = gamma[ch];
      const b = beta[ch];
      for (let i = 0; i < hw; i++) {
        const xh = (x[base + i] - mu) * is;
        xhat[base + i] = xh;
        out[base + i] = g * xh + b;
      }
    }
  }
  return { out, cache: { xhat, invStd, mean, variance } };
}

export function batchNormEvalForward(
  x: Float64Array, n: number, c: number, hw: number,
  gamma: Float64Array, beta: Float64Array,
  runningMean: Float64Array, runningVar: Float64Array, eps = BN_EPS,
): Float64Array {
  const out = new Float64Array(x.length);
  for (let ch = 0; ch < c; ch++) {
    const scale = gamma[ch] / Math.sqrt(runningVar[ch] + eps);
    const shift = beta[ch] - runningMean[ch] * scale;
    for (let s = 0; s < n; s++) {
      const base = (s * c + ch) * hw;
      for (let i = 0; i < hw; i++) out[base + i] = x[base + i] * scale + shift;
    }
  }
  return out;
}

export function batchNormBackward(
  dy: Float64Array, cache: BatchNormCache, n: number, c: number, hw: number,
  gamma: Float64Array,
): { dx: Float64Array; dGamma: Float64Array; dBeta: Float64Array } {
  const { xhat, invStd } = cache;
  const m = n * hw;
  const dGamma = new Float64Array(c);
  const dBeta = new Float64Array(c);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const base = (s * c + ch) * hw;
      let sg = 0;
      let sb = 0;
      for (let i = 0; i < hw; i++) {
        sg += dy[base + i] * xhat[base + i];
        sb += dy[base + i];
      }
      dGamma[ch] += sg;
      dBeta[ch] += sb;
    }
  }
  const dx = new Float64Array(dy.length);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const base = (s * c + ch) * hw;
      const k = gamma[ch] * invStd[ch];
      const meanDy = dBeta[ch] / m;
      const meanDyXhat = dGamma[ch] / m;
      for (let i = 0; i < hw; i++) {
        dx[base + i] = k * (dy[base + i] - meanDy - xhat[base + i] * meanDyXhat);
      }
    }
  }
  return { dx, dGamma, dBeta };
}

// ---------------------------------------------------------------------------
// Global average pool and channel gate over [n, c, hw].

export function globalPoolForward(
  x: Float64Array, n: number, c: number, hw: number,
): Float64Array {
  const out = new Float64Array(n * c);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const base = (s * c + ch) * hw;
      let sum = 0;
      for (let i = 0; i < hw; i++) sum += x[base + i];
      out[s * c + ch] = sum / hw;
    }
  }
  return out;
}

export function globalPoolBackward(
  dPooled: Float64Array, n: number, c: number, hw: number,
): Float64Array {
  const dx = new Float64Array(n * c * hw);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const g = dPooled[s * c + ch] / hw;
      const base = (s * c + ch) * hw;
      for (let i = 0; i < hw; i++) dx[base + i] = g;
    }
  }
  return dx;
}

/** out[s, ch, i] = x[s, ch, i] * gains[s, ch]. */
export function gateForward(
  x: Float64Array, gains: Float64Array, n: number, c: number, hw: number,
): Float64Array {
  const out = new Float64Array(x.length);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const g = gains[s * c + ch];
      const base = (s * c + ch) * hw;
      for (let i = 0; i < hw; i++) out[base + i] = x[base + i] * g;
    }
  }
  return out;
}

export function gateBackward(
  dy: Float64Array, x: Float64Array, gains: Float64Array,
  n: number, c: number, hw: number,
): { dx: Float64Array; dGains: Float64Array } {
  const dx = new Float64Array(x.length);
  const dGains = new Float64Array(n * c);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const g = gains[s * c + ch];
      const base = (s * c + ch) * hw;
      let sum = 0;
      for (let i = 0; i < hw; i++) {
        dx[base + i] = dy[base + i] * g;
        sum += dy[base + i] * x[base + i];
      }
      dGains[s * c + ch] = sum;
    }
  }
  return { dx, dGains };
}

// ---------------------------------------------------------------------------
// Channel-major variants for the training trunk.
//
// Batched training keeps trunk activations as [c][n][h][w] — element
// (ch, s, i) lives at (ch·n + s)·hw + i — so a pointwise convolution over
// the whole batch collapses to a single [cOut x cIn] @ [cIn x n·hw]
// product with long, cache-friendly inner loops, and per-channel batch
// statistics reduce over contiguous memory. The sample-major functions
// above remain the reference semantics (and serve the folded eval path);
// these must match them exactly under the layout permutation.

/** [n][c][hw] -> [c][n·hw]. */
export function smToCm(x: Float64Array, n: number, c: number, hw: number): Float64Array {
  const out = new Float64Array(x.length);
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const src = (s * c + ch) * hw;
      const dst = (ch * n + s) * hw;
      for (let i = 0; i < hw; i++) out[dst + i] = x[src + i];
    }
  }
  return out;
}

/** [c][n·hw] -> [n][c][hw]. */
export function cmToSm(x: Float64Array, n: number, c: number, hw: number): Float64Array {
  const out = new Float64Array(x.length);
  for (let ch = 0; ch < c; ch++) {
    for (let s = 0; s < n; s++) {
      const src = (ch * n + s) * hw;
      const dst = (s * c + ch) * hw;
      for (let i = 0; i < hw; i++) out[dst + i] = x[src + i];
    }
  }
  return out;
}

/** Pointwise (1x1, stride 1) convolution over a channel-major batch. */
export function pointwiseForwardCm(
  x: Float64Array, n: number, cIn: number, cOut: number, hw: number,
  weight: Float64Array,
): Float64Array {
  const out = new Float64Array(cOut * n * hw);
  matmulAcc(weight, x, out, cOut, cIn, n * hw);
  return out;
}

export function pointwiseBackwardCm(
  dy: Float64Array, x: Float64Array, n: number, cIn: number, cOut: number,
  hw: number, weight: Float64Array,
): { dx: Float64Array; dw: Float64Array } {
  const p = n * hw;
  const dx = new Float64Array(cIn * p);
  const dw = new Float64Array(weight.length);
  matmulAtBAcc(weight, dy, dx, cOut, cIn, p);
  matmulABtAcc(dy, x, dw, cOut, p, cIn);
  return { dx, dw };
}

export function conv2dForwardCm(
  x: Float64Array, d: ConvDims, weight: Float64Array,
): Float64Array {
  const { n, cIn, h, w, cOut, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  if (kernel === 1 && stride === 1 && padding === 0) {
    return pointwiseForwardCm(x, n, cIn, cOut, h * w, weight);
  }
  const out = new Float64Array(cOut * n * ho * wo);
  const inPlane = h * w;
  const outPlane = ho * wo;
  for (let co = 0; co < cOut; co++) {
    const wBase = co * cIn * kernel * kernel;
    for (let ci = 0; ci < cIn; ci++) {
      const wPlane = wBase + ci * kernel * kernel;
      for (let s = 0; s < n; s++) {
        const xPlane = (ci * n + s) * inPlane;
        const oPlane = (co * n + s) * outPlane;
        for (let oi = 0; oi < ho; oi++) {
          for (let oj = 0; oj < wo; oj++) {
            let sum = 0;
            for (let ki = 0; ki < kernel; ki++) {
              const ii = oi * stride - padding + ki;
              if (ii < 0 || ii >= h) continue;
              for (let kj = 0; kj < kernel; kj++) {
                const jj = oj * stride - padding + kj;
                if (jj < 0 || jj >= w) continue;
                sum += weight[wPlane + ki * kernel + kj] * x[xPlane + ii * w + jj];
              }
            }
            out[oPlane + oi * wo + oj] += sum;
          }
        }
      }
    }
  }
  return out;
}

export function conv2dBackwardCm(
  dy: Float64Array, x: Float64Array, d: ConvDims, weight: Float64Array,
  needDx = true,
): { dx: Float64Array; dw: Float64Array } {
  const { n, cIn, h, w, cOut, kernel, stride, padding } = d;
  if (kernel === 1 && stride === 1 && padding === 0 && needDx) {
    return pointwiseBackwardCm(dy, x, n, cIn, cOut, h * w, weight);
  }
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const inPlane = h * w;
  const outPlane = ho * wo;
  const dx = new Float64Array(needDx ? cIn * n * inPlane : 0);
  const dw = new Float64Array(weight.length);
  for (let co = 0; co < cOut; co++) {
    const wBase = co * cIn * kernel * kernel;
    for (let ci = 0; ci < cIn; ci++) {
      const wPlane = wBase + ci * kernel * kernel;
      for (let s = 0; s < n; s++) {
        const xPlane = (ci * n + s) * inPlane;
        const dyPlane = (co * n + s) * outPlane;
        for (let oi = 0; oi < ho; oi++) {
          for (let oj = 0; oj < wo; oj++) {
            const g = dy[dyPlane + oi * wo + oj];
            if (g === 0) continue;
            for (let ki = 0; ki < kernel; ki++) {
              const ii = oi * stride - padding + ki;
              if (ii < 0 || ii >= h) continue;
              for (let kj = 0; kj < kernel; kj++) {
                const jj = oj * stride - padding + kj;
                if (jj < 0 || jj >= w) continue;
                dw[wPlane + ki * kernel + kj] += g * x[xPlane + ii * w + jj];
                if (needDx) dx[xPlane + ii * w + jj] += g * weight[wPlane + ki * kernel + kj];
              }
            }
          }
        }
      }
    }
  }
  return { dx, dw };
}

export function depthwiseForwardCm(
  x: Float64Array, d: DepthwiseDims, weight: Float64Array,
): Float64Array {
  const { n, c, h, w, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const out = new Float64Array(c * n * ho * wo);
  const inPlane = h * w;
  const outPlane = ho * wo;
  for (let ch = 0; ch < c; ch++) {
    const wPlane = ch * kernel * kernel;
    for (let s = 0; s < n; s++) {
      const xPlane = (ch * n + s) * inPlane;
      const oPlane = (ch * n + s) * outPlane;
      for (let oi = 0; oi < ho; oi++) {
        for (let oj = 0; oj < wo; oj++) {
          let sum = 0;
          for (let ki = 0; ki < kernel; ki++) {
            const ii = oi * stride - padding + ki;
            if (ii < 0 || ii >= h) continue;
            for (let kj = 0; kj < kernel; kj++) {
              const jj = oj * stride - padding + kj;
              if (jj < 0 || jj >= w) continue;
              sum += weight[wPlane + ki * kernel + kj] * x[xPlane + ii * w + jj];
            }
          }
          out[oPlane + oi * wo + oj] = sum;
        }
      }
    }
  }
  return out;
}

export function depthwiseBackwardCm(
  dy: Float64Array, x: Float64Array, d: DepthwiseDims, weight: Float64Array,
): { dx: Float64Array; dw: Float64Array } {
  const { n, c, h, w, kernel, stride, padding } = d;
  const ho = convOutSize(h, kernel, stride, padding);
  const wo = convOutSize(w, kernel, stride, padding);
  const inPlane = h * w;
  const outPlane = ho * wo;
  const dx = new Float64Array(c * n * inPlane);
  const dw = new Float64Array(weight.length);
  for (let ch = 0; ch < c; ch++) {
    const wPlane = ch * kernel * kernel;
    for (let s = 0; s < n; s++) {
      const xPlane = (ch * n + s) * inPlane;
      const dyPlane = (ch * n + s) * outPlane;
      for (let oi = 0; oi < ho; oi++) {
        for (let oj = 0; oj < wo; oj++) {
          const g = dy[dyPlane + oi * wo + oj];
          if (g === 0) continue;
          for (let ki = 0; ki < kernel; ki++) {
            const ii = oi * stride - padding + ki;
            if (ii < 0 || ii >= h) continue;
            for (let kj = 0; kj < kernel; kj++) {
              const jj = oj * stride - padding + kj;
              if (jj < 0 || jj >= w) continue;
              dw[wPlane + ki * kernel + kj] += g * x[xPlane + ii * w + jj];
              dx[xPlane + ii * w + jj] += g * weight[wPlane + ki * kernel + kj];
            }
          }
        }
      }
    }
  }
  return { dx, dw };
}

export function batchNormTrainForwardCm(
  x: Float64Array, n: number, c: number, hw: number,
  gamma: Float64Array, beta: Float64Array, eps = BN_EPS,
): { out: Float64Array; cache: BatchNormCache } {
  const m = n * hw;
  const mean = new Float64Array(c);
  const variance = new Float64Array(c);
  const invStd = new Float64Array(c);
  const xhat = new Float64Array(x.length);
  const out = new Float64Array(x.length);
  for (let ch = 0; ch < c; ch++) {
    const base = ch * m;
    let sum = 0;
    for (let i = 0; i < m; i++) sum += x[base + i];
    const mu = sum / m;
    let sq = 0;
    for (let i = 0; i < m; i++) {
      const d = x[base + i] - mu;
      sq += d * d;
    }
    const varc = sq / m;
    const is = 1 / Math.sqrt(varc + eps);
    mean[ch] = mu;
    variance[ch] = varc;
    invStd[ch] = is;
    const g = gamma[ch];
    const b = beta[ch];
    for (let i = 0; i < m; i++) {
      const xh = (x[base + i] - mu) * is;
      xhat[base + i] = xh;
      out[base + i] = g * xh + b;
    }
  }
  return { out, cache: { xhat, invStd, mean, variance } };
}

export function batchNormEvalForwardCm(
  x: Float64Array, n: number, c: number, hw: number,
  gamma: Float64Array, beta: Float64Array,
  runningMean: Float64Array, runningVar: Float64Array, eps = BN_EPS,
): Float64Array {
  const m = n * hw;
  const out = new Float64Array(x.length);
  for (let ch = 0; ch < c; ch++) {
    const scale = gamma[ch] / Math.sqrt(runningVar[ch] + eps);
    const shift = beta[ch] - runningMean[ch] * scale;
    const base = ch * m;
    for (let i = 0; i < m; i++) out[base + i] = x[base + i] * scale + shift;
  }
  return out;
}

export function batchNormBackwardCm(
  dy: Float64Array, cache: BatchNormCache, n: number, c: number, hw: number,
  gamma: Float64Array,
): { dx: Float64Array; dGamma: Float64Array; dBeta: Float64Array } {
  const { xhat, invStd } = cache;
  const m = n * hw;
  const dGamma = new Float64Array(c);
  const dBeta = new Float64Array(c);
  const dx = new Float64Array(dy.length);
  for (let ch = 0; ch < c; ch++) {
    const base = ch * m;
    let sg = 0;
    let sb = 0;
    for (let i = 0; i < m; i++) {
      sg += dy[base + i] * xhat[base + i];
      sb += dy[base + i];
    }
    dGamma[ch] = sg;
    dBeta[ch] = sb;
    const k = gamma[ch] * invStd[ch];
    const meanDy = sb / m;
    const meanDyXhat = sg / m;
    for (let i = 0; i < m; i++) {
      dx[base + i] = k * (dy[base + i] - meanDy - xhat[base + i] * meanDyXhat);
    }
  }
  return { dx, dGamma, dBeta };
}

/** Channel-major pool into a sample-major [n x c] matrix. */
export function globalPoolForwardCm(
  x: Float64Array, n: number, c: number, hw: number,
): Float64Array {
  const out = new Float64Array(n * c);
  for (let ch = 0; ch < c; ch++) {
    for (let s = 0; s < n; s++) {
      const base = (ch * n + s) * hw;
      let sum = 0;
      for (let i = 0; i < hw; i++) sum += x[base + i];
      out[s * c + ch] = sum / hw;
    }
  }
  return out;
}

export function globalPoolBackwardCm(
  dPooled: Float64Array, n: number, c: number, hw: number,
): Float64Array {
  const dx = new Float64Array(c * n * hw);
  for (let ch = 0; ch < c; ch++) {
    for (let s = 0; s < n; s++) {
      const g = dPooled[s * c + ch] / hw;
      const base = (ch * n + s) * hw;
      for (let i = 0; i < hw; i++) dx[base + i] = g;
    }
  }
  return dx;
}

/** Channel-major gate with sample-major [n x c] gains. */
export function gateForwardCm(
  x: Float64Array, gains: Float64Array, n: number, c: number, hw: number,
): Float64Array {
  const out = new Float64Array(x.length);
  for (let ch = 0; ch < c; ch++) {
    for (let s = 0; s < n; s++) {
      const g = gains[s * c + ch];
      const base = (ch * n + s) * hw;
      for (let i = 0; i < hw; i++) out[base + i] = x[base + i] * g;
    }
  }
  return out;
}

export function gateBackwardCm(
  dy: Float64Array, x: Float64Array, gains: Float64Array,
  n: number, c: number, hw: number,
): { dx: Float64Array; dGains: Float64Array } {
  const dx = new Float64Array(x.length);
  const dGains = new Float64Array(n * c);
  for (let ch = 0; ch < c; ch++) {
    for (let s = 0; s < n; s++) {
      const g = gains[s * c + ch];
      const base = (ch * n + s) * hw;
      let sum = 0;
      for (let i = 0; i < hw; i++) {
        dx[base + i] = dy[base + i] * g;
        sum += dy[base + i] * x[base + i];
      }
      dGains[s * c + ch] = sum;
    }
  }
  return { dx, dGains };
}
