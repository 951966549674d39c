/** Training objectives: asymmetric mask regression, focal classification,
 * and homoscedastic-uncertainty task weighting.
 */

const LOG_GUARD = 1e-12;

/** Asymmetric squared error between a target gain vector and an estimate.
 *
 * Bins where the estimate exceeds the target (residual echo leaking
 * through) pay full quadratic cost; bins where the estimate falls below
 * the target (extra suppression, some near-end damage) are down-weighted
 * by `alpha`, so `alpha < 1` biases the model toward aggressive masks.
 * Ties land in the down-weighted branch. Mean over bins.
 */
export function suppressionLoss(
  gTrue: ArrayLike<number>, gEst: ArrayLike<number>, alpha: number,
): number {
  const bins = gTrue.length;
  if (gEst.length !== bins) throw new Error("gain vectors differ in length");
  let total = 0;
  for (let k = 0; k < bins; k++) {
    const d = gTrue[k] - gEst[k];
    total += gTrue[k] < gEst[k] ? d * d : alpha * alpha * d * d;
  }
  return total / bins;
}

/** d(suppressionLoss)/d(gEst), same shape as the estimate. */
export function suppressionLossGrad(
  gTrue: ArrayLike<number>, gEst: ArrayLike<number>, alpha: number,
): Float64Array {
  const bins = gTrue.length;
  const grad = new Float64Array(bins);
  for (let k = 0; k < bins; k++) {
    const d = gEst[k] - gTrue[k];
    grad[k] = gTrue[k] < gEst[k] ? (2 * d) / bins : (2 * alpha * alpha * d) / bins;
  }
  return grad;
}

/** Mean suppression loss over a batch of [n x bins] gain frames. */
export function batchSuppressionLoss(
  gTrue: Float64Array, gEst: Float64Array, n: number, bins: number, alpha: number,
  frameWeights: Float64Array | null = null,
): { loss: number; grad: Float64Array } {
  const grad = new Float64Array(n * bins);
  let total = 0;
  let weightSum = 0;
  for (let s = 0; s < n; s++) {
    const fw = frameWeights === null ? 1 : frameWeights[s];
    weightSum += fw;
    if (fw === 0) continue;
    const base = s * bins;
    for (let k = 0; k < bins; k++) {
      const d = gEst[base + k] - gTrue[base + k];
      const weighted = gTrue[base + k] < gEst[base + k] ? 1 : alpha * alpha;
      total += fw * weighted * d * d;
      grad[base + k] = fw * 2 * weighted * d;
    }
  }
  const norm = bins * (weightSum > 0 ? weightSum : 1);
  for (let i = 0; i < grad.length; i++) grad[i] /= norm;
  return { loss: total / norm, grad };
}

/** Focal loss for one frame: (1 - p)^gamma * (-ln p) on the true class. */
export function focalLoss(pTrue: number, gamma: number): number {
  const p = Math.max(pTrue, LOG_GUARD);
  return Math.pow(1 - pTrue, gamma) * -Math.log(p);
}

/** d(focalLoss)/d(pTrue). */
export function focalLossGradP(pTrue: number, gamma: number): number {
  const p = Math.max(pTrue, LOG_GUARD);
  const focus = Math.pow(1 - pTrue, gamma);
  const dFocus = gamma === 0 ? 0 : -gamma * Math.pow(1 - pTrue, gamma - 1);
  return dFocus * -Math.log(p) - focus / p;
}

/** Mean focal loss over [n x classes] probability rows with integer labels.
 *
 * Returns the gradient with respect to the probabilities (nonzero only at
 * each row's true class), ready to push through a softmax backward step.
 */
export function batchFocalLoss(
  probs: Float64Array, labels: Uint8Array | Int32Array, n: number, classes: number,
  gamma: number,
): { loss: number; dProbs: Float64Array } {
  const dProbs = new Float64Array(n * classes);
  let total = 0;
  for (let s = 0; s < n; s++) {
    const p = probs[s * classes + labels[s]];
    total += focalLoss(p, gamma);
    dProbs[s * classes + labels[s]] = focalLossGradP(p, gamma) / n;
  }
  return { loss: total / n, dProbs };
}

/** Uncertainty-weighted sum: sum_i exp(-logVar_i) * loss_i + logVar_i. */
export function combinedLoss(
  losses: ArrayLike<number>, logVars: ArrayLike<number>,
): { total: number; dLosses: Float64Array; dLogVars: Float64Array } {
  if (losses.length !== logVars.length) throw new Error("losses and logVars differ in length");
  const dLosses = new Float64Array(losses.length);
  const dLogVars = new Float64Array(losses.length);
  let total = 0;
  for (let i = 0; i < losses.length; i++) {
    const precision = Math.exp(-logVars[i]);
    total += precision * losses[i] + logVars[i];
    dLosses[i] = precision;
    dLogVars[i] = -precision * losses[i] + 1;
  }
  return { total, dLosses, dLogVars };
}
