"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way — explicit summation
formulas, no FFTs, no vectorized convolution tricks — so the package code is
checked against arithmetic that shares none of its shortcuts. Oracles run in
float64 (complex128).
"""

from __future__ import annotations

import math

import numpy as np


def direct_dft(x: np.ndarray) -> np.ndarray:
    """O(N²) discrete Fourier transform by explicit summation."""
    n = len(x)
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return basis @ np.asarray(x, dtype=np.complex128)


def direct_frame_bins(block: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Windowed transform of one analysis block; retained bins 1..N/2."""
    spectrum = direct_dft(np.asarray(block, dtype=np.float64) * window)
    return spectrum[1: len(block) // 2 + 1]


def direct_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                  stride: int, padding: int) -> np.ndarray:
    """Cross-correlation by explicit loops over every output element."""
    c_out, c_in, kh, kw = kernel.shape
    _, h, w = x.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    xp[:, padding: padding + h, padding: padding + w] = x
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    for co in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = float(bias[co])
                for ci in range(c_in):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += kernel[co, ci, di, dj] * xp[ci, i * stride + di, j * stride + dj]
                out[co, i, j] = acc
    return out


def direct_depthwise_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                            stride: int, padding: int) -> np.ndarray:
    """Per-channel spatial cross-correlation by explicit loops."""
    c, _, kh, kw = kernel.shape
    _, h, w = x.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    xp[:, padding: padding + h, padding: padding + w] = x
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c, h_out, w_out), dtype=np.float64)
    for ch in range(c):
        for i in range(h_out):
            for j in range(w_out):
                acc = float(bias[ch])
                for di in range(kh):
                    for dj in range(kw):
                        acc += kernel[ch, 0, di, dj] * xp[ch, i * stride + di, j * stride + dj]
                out[ch, i, j] = acc
    return out


def direct_matvec(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix-vector product by per-row explicit summation."""
    out = np.zeros(w.shape[0], dtype=np.float64)
    for i in range(w.shape[0]):
        acc = float(b[i])
        for j in range(w.shape[1]):
            acc += float(w[i, j]) * float(x[j])
        out[i] = acc
    return out


def direct_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Linear convolution truncated to ``len(x)`` by the defining sum."""
    n = len(x)
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for j in range(min(i + 1, len(h))):
            acc += h[j] * x[i - j]
        out[i] = acc
    return out


def log_magnitude(frame: np.ndarray, eps: float) -> np.ndarray:
    """Per-bin ``ln(sqrt(re² + im²) + eps)`` using scalar math."""
    return np.array(
        [math.log(math.hypot(z.real, z.imag) + eps) for z in np.asarray(frame)]
    )


def schroeder_t60(rir: np.ndarray, fs: int) -> float:
    """Decay time to -60 dB from the Schroeder backward integral.

    Truncated responses never reach -60 dB inside their own length, so the
    slope of the decay curve is fit over its -5..-25 dB span and
    extrapolated.
    """
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    curve = 10.0 * np.log10(energy / energy[0] + 1e-300)
    lo, hi = -5.0, -25.0
    idx = np.where((curve <= lo) & (curve >= hi))[0]
    if len(idx) < 8:
        raise ValueError("decay range too short to fit a slope")
    t = idx / fs
    slope, intercept = np.polyfit(t, curve[idx], 1)
    if slope >= 0:
        raise ValueError("no decay detected")
    return (-60.0 - intercept) / slope
