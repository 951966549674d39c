"""Inference primitives: convolutions, fully-connected layers, activations.

All ops are dtype-generic (float32 in production, float64 in the parity
tests) and allocation-light: the hot path reuses caller-provided output and
padding buffers. The depthwise convolution has a compiled kernel (numba)
with a pure-numpy fallback — set ``RAES_NO_NUMBA=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

_USE_NUMBA = os.environ.get("RAES_NO_NUMBA", "") == ""
if _USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _USE_NUMBA = False

if _USE_NUMBA:

    @numba.njit(cache=True, fastmath=True)
    def _dw3_kernel(xp, w, b, stride, out):  # pragma: no cover - compiled
        channels, h_out, w_out = out.shape
        for c in range(channels):
            w00 = w[c, 0, 0]; w01 = w[c, 0, 1]; w02 = w[c, 0, 2]
            w10 = w[c, 1, 0]; w11 = w[c, 1, 1]; w12 = w[c, 1, 2]
            w20 = w[c, 2, 0]; w21 = w[c, 2, 1]; w22 = w[c, 2, 2]
            bias = b[c]
            for i in range(h_out):
                hi = i * stride
                r0 = xp[c, hi]
                r1 = xp[c, hi + 1]
                r2 = xp[c, hi + 2]
                for j in range(w_out):
                    wi = j * stride
                    out[c, i, j] = (
                        bias
                        + w00 * r0[wi] + w01 * r0[wi + 1] + w02 * r0[wi + 2]
                        + w10 * r1[wi] + w11 * r1[wi + 1] + w12 * r1[wi + 2]
                        + w20 * r2[wi] + w21 * r2[wi + 1] + w22 * r2[wi + 2]
                    )


def _out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad_input(x: np.ndarray, padding: int, buf: np.ndarray | None) -> np.ndarray:
    """Zero-pad spatially. A caller-provided ``buf`` must be zero-initialized;
    only its interior is ever written, so the zero border is an invariant and
    no per-call clearing happens."""
    if padding == 0:
        return x
    c, h, w = x.shape
    if buf is None:
        buf = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    buf[:, padding: padding + h, padding: padding + w] = x
    return buf


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
           stride: int = 1, padding: int = 0, layer: str = "conv2d",
           out: np.ndarray | None = None, pad_buf: np.ndarray | None = None,
           col_buf: np.ndarray | None = None) -> np.ndarray:
    """2-D cross-correlation over a (C_in, H, W) input.

    ``kernel`` has shape (C_out, C_in, k, k); output spatial dims follow
    ``floor((size + 2*padding - k)/stride) + 1``. Shape disagreements raise
    ``ValueError`` naming ``layer``.
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError(f"{layer}: expected 3-D input and 4-D kernel, "
                         f"got {x.shape} and {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw:
        raise ValueError(f"{layer}: kernels must be square, got {kh}x{kw}")
    if x.shape[0] != c_in:
        raise ValueError(f"{layer}: input has {x.shape[0]} channels, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"{layer}: bias shape {bias.shape} != ({c_out},)")
    h_out = _out_size(x.shape[1], kh, stride, padding)
    w_out = _out_size(x.shape[2], kw, stride, padding)
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"{layer}: kernel {kh}x{kw} larger than padded input {x.shape}")

    xp = _pad_input(x, padding, pad_buf)
    if kh == 1 and stride == 1:
        # Pointwise fast path: a plain channel-mixing matrix product.
        w2d = kernel.reshape(c_out, c_in)
        x2d = xp.reshape(c_in, -1)
        if out is None:
            y = w2d @ x2d
        else:
            y = out.reshape(c_out, x2d.shape[1])
            np.dot(w2d, x2d, out=y)
        y += bias[:, None]
        return y.reshape(c_out, h_out, w_out)

    # im2col: gather every receptive field into a column, one matrix product.
    cs, hs, ws = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c_in, kh, kw, h_out, w_out),
        strides=(cs, hs, ws, hs * stride, ws * stride),
    )
    if col_buf is None:
        cols = patches.reshape(c_in * kh * kw, h_out * w_out) \
            if patches.flags.c_contiguous else \
            np.ascontiguousarray(patches).reshape(c_in * kh * kw, h_out * w_out)
    else:
        np.copyto(col_buf.reshape(patches.shape), patches)
        cols = col_buf.reshape(c_in * kh * kw, h_out * w_out)
    w2d = kernel.reshape(c_out, c_in * kh * kw)
    if out is None:
        y = w2d @ cols
    else:
        y = out.reshape(c_out, cols.shape[1])
        np.dot(w2d, cols, out=y)
    y += bias[:, None]
    return y.reshape(c_out, h_out, w_out)


def depthwise_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                     stride: int = 1, padding: int = 0, layer: str = "depthwise",
                     out: np.ndarray | None = None,
                     pad_buf: np.ndarray | None = None) -> np.ndarray:
    """Per-channel spatial cross-correlation (no channel mixing).

    ``kernel`` has shape (C, 1, k, k); each channel is filtered by its own
    k×k kernel.
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError(f"{layer}: expected 3-D input and 4-D kernel, "
                         f"got {x.shape} and {kernel.shape}")
    c, one, kh, kw = kernel.shape
    if one != 1 or kh != kw:
        raise ValueError(f"{layer}: depthwise kernel must be (C, 1, k, k), got {kernel.shape}")
    if x.shape[0] != c:
        raise ValueError(f"{layer}: input has {x.shape[0]} channels, kernel expects {c}")
    if bias.shape != (c,):
        raise ValueError(f"{layer}: bias shape {bias.shape} != ({c},)")
    h_out = _out_size(x.shape[1], kh, stride, padding)
    w_out = _out_size(x.shape[2], kw, stride, padding)
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"{layer}: kernel {kh}x{kw} larger than padded input {x.shape}")

    xp = _pad_input(x, padding, pad_buf)
    if out is None:
        out = np.empty((c, h_out, w_out), dtype=x.dtype)
    w3d = kernel.reshape(c, kh, kw)
    if _USE_NUMBA and kh == 3 and x.dtype == np.float32 and xp.flags.c_contiguous:
        _dw3_kernel(xp, w3d, bias.astype(np.float32, copy=False), stride, out)
        return out
    acc = np.zeros((c, h_out, w_out), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            acc += (w3d[:, di, dj, None, None]
                    * xp[:, di: di + stride * h_out: stride, dj: dj + stride * w_out: stride])
    acc += bias[:, None, None]
    out[:] = acc
    return out


def fully_connected(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    layer: str = "fc", out: np.ndarray | None = None) -> np.ndarray:
    """Affine map ``w @ x + b`` for a vector input."""
    if x.ndim != 1 or w.ndim != 2:
        raise ValueError(f"{layer}: expected vector input and 2-D weight, "
                         f"got {x.shape} and {w.shape}")
    if w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise ValueError(
            f"{layer}: dimension mismatch: weight {w.shape}, input {x.shape}, bias {b.shape}"
        )
    if out is None:
        return w @ x + b
    np.dot(w, x, out=out)
    out += b
    return out


def activation(x: np.ndarray, kind: str, out: np.ndarray | None = None) -> np.ndarray:
    """Elementwise relu6 / sigmoid, or vector softmax."""
    if out is None:
        out = np.empty_like(x)
    if kind == "relu6":
        np.clip(x, 0.0, 6.0, out=out)
    elif kind == "sigmoid":
        np.negative(x, out=out)
        np.exp(out, out=out)
        out += 1.0
        np.reciprocal(out, out=out)
    elif kind == "softmax":
        if x.ndim != 1:
            raise ValueError(f"softmax expects a vector, got shape {x.shape}")
        np.subtract(x, x.max(), out=out)
        np.exp(out, out=out)
        out /= out.sum()
    elif kind == "linear":
        if out is not x:
            out[:] = x
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return out


def inverted_residual(x: np.ndarray, params: dict[str, np.ndarray], stride: int,
                      block: str = "irb") -> np.ndarray:
    """Inverted residual bottleneck: expand (relu6) → 3×3 depthwise (relu6)
    → project (linear), with a skip connection iff stride is 1 and the
    channel count is preserved.

    ``params`` maps ``expand.w/expand.b/dw.w/dw.b/project.w/project.b`` to
    tensors shaped as in the architecture table.
    """
    try:
        expanded = conv2d(x, params["expand.w"], params["expand.b"],
                          stride=1, padding=0, layer=f"{block}.expand")
        expanded = activation(expanded, "relu6", out=expanded)
        filtered = depthwise_conv2d(expanded, params["dw.w"], params["dw.b"],
                                    stride=stride, padding=1, layer=f"{block}.dw")
        filtered = activation(filtered, "relu6", out=filtered)
        projected = conv2d(filtered, params["project.w"], params["project.b"],
                           stride=1, padding=0, layer=f"{block}.project")
    except KeyError as exc:
        raise ValueError(f"{block}: missing parameter {exc.args[0]!r}") from None
    if stride == 1 and projected.shape == x.shape:
        projected += x
    return projected
