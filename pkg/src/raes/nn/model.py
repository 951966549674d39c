"""Single-frame forward pass: feature tensor → (mask, detector posterior).

The pass is written straight-line against the architecture table with
every intermediate living in a preallocated :class:`Scratch`, so
steady-state inference performs no heap allocation. Each stage is followed
by a cheap finiteness check (one vectorized sum — NaN/Inf poison the sum)
that turns numeric blow-ups into an :class:`InferenceError` naming the
offending layer instead of a silently corrupt mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from raes.nn.arch import ARCHITECTURE, INPUT_SHAPE, Architecture
from raes.nn.ops import activation, conv2d, depthwise_conv2d, fully_connected


class InferenceError(Exception):
    """A forward pass could not produce a valid output."""


@dataclass(frozen=True)
class ModelOutput:
    """Per-frame network outputs.

    ``mask`` holds 64 suppression gains in [0, 1]; ``dtd`` the softmax
    posterior over {near-end only, far-end only, double talk};
    ``embedding`` the 32-dim detector embedding that drives the gate.
    """

    mask: np.ndarray
    dtd: np.ndarray
    embedding: np.ndarray


class Scratch:
    """Preallocated buffers for one forward pass.

    Create once and pass to every :func:`forward` call on the same thread;
    outputs are copied out, so reuse across frames is safe.
    """

    def __init__(self, architecture: Architecture = ARCHITECTURE):
        self.architecture = architecture
        self.out: dict[str, np.ndarray] = {}
        self.pad: dict[str, np.ndarray] = {}
        self.col: dict[str, np.ndarray] = {}
        self.blocks: list[tuple[str, int]] = []
        for layer in architecture.layers:
            if layer.kind in ("conv", "depthwise", "norm", "fc", "pool"):
                self.out[layer.name] = np.empty(layer.out_shape, dtype=np.float32)
            if layer.kind in ("conv", "depthwise") and layer.padding > 0:
                c, h, w = layer.in_shape
                p = layer.padding
                self.pad[layer.name] = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.float32)
            if layer.kind == "conv" and layer.kernel > 1:
                spatial = layer.out_shape[1] * layer.out_shape[2]
                self.col[layer.name] = np.empty(
                    (layer.in_shape[0] * layer.kernel ** 2, spatial), dtype=np.float32
                )
            if layer.kind == "depthwise" and layer.name.endswith(".dw"):
                self.blocks.append((layer.name[: -len(".dw")], layer.stride))


def _assert_finite(buf: np.ndarray, layer: str) -> None:
    if math.isfinite(float(buf.sum())):
        return
    raise InferenceError(f"non-finite activations after layer {layer!r}")


def forward(feature: np.ndarray, weights, scratch: Scratch | None = None) -> ModelOutput:
    """Run the network on one 2×40×32 feature tensor.

    ``weights`` is a validated :class:`~raes.nn.weights.WeightBundle`;
    ``scratch`` may be shared across calls to avoid per-frame allocation.
    """
    x = np.asarray(feature, dtype=np.float32)
    if x.shape != INPUT_SHAPE:
        raise InferenceError(f"input: expected feature shape {INPUT_SHAPE}, got {x.shape}")
    if scratch is None:
        scratch = Scratch(weights.architecture)
    t = weights.tensors
    out = scratch.out

    buf = out["feat_norm"]
    np.multiply(x, t["feat_norm.scale"], out=buf)
    buf += t["feat_norm.offset"]
    _assert_finite(buf, "feat_norm")

    buf = conv2d(buf, t["stem.w"], t["stem.b"], stride=2, padding=1, layer="stem",
                 out=out["stem"], pad_buf=scratch.pad["stem"], col_buf=scratch.col["stem"])
    _assert_finite(buf, "stem")
    activation(buf, "relu6", out=buf)

    for block, stride in scratch.blocks:
        expanded = conv2d(buf, t[f"{block}.expand.w"], t[f"{block}.expand.b"],
                          layer=f"{block}.expand", out=out[f"{block}.expand"])
        _assert_finite(expanded, f"{block}.expand")
        activation(expanded, "relu6", out=expanded)

        filtered = depthwise_conv2d(expanded, t[f"{block}.dw.w"], t[f"{block}.dw.b"],
                                    stride=stride, padding=1, layer=f"{block}.dw",
                                    out=out[f"{block}.dw"], pad_buf=scratch.pad[f"{block}.dw"])
        _assert_finite(filtered, f"{block}.dw")
        activation(filtered, "relu6", out=filtered)

        projected = conv2d(filtered, t[f"{block}.project.w"], t[f"{block}.project.b"],
                           layer=f"{block}.project", out=out[f"{block}.project"])
        if stride == 1 and projected.shape == buf.shape:
            projected += buf
        _assert_finite(projected, f"{block}.project")
        buf = projected

    trunk = buf
    pooled = trunk.mean(axis=(1, 2), out=out["dtd.pool"])
    _assert_finite(pooled, "dtd.pool")

    embedding = fully_connected(pooled, t["dtd.fc1.w"], t["dtd.fc1.b"],
                                layer="dtd.fc1", out=out["dtd.fc1"])
    _assert_finite(embedding, "dtd.fc1")
    activation(embedding, "relu6", out=embedding)

    dtd = fully_connected(embedding, t["dtd.fc2.w"], t["dtd.fc2.b"],
                          layer="dtd.fc2", out=out["dtd.fc2"])
    _assert_finite(dtd, "dtd.fc2")
    activation(dtd, "softmax", out=dtd)

    gains = fully_connected(embedding, t["gate.fc.w"], t["gate.fc.b"],
                            layer="gate.fc", out=out["gate.fc"])
    _assert_finite(gains, "gate.fc")
    activation(gains, "sigmoid", out=gains)

    trunk *= gains[:, None, None]
    _assert_finite(trunk, "gate.apply")

    hidden = fully_connected(trunk.reshape(-1), t["mask.fc1.w"], t["mask.fc1.b"],
                             layer="mask.fc1", out=out["mask.fc1"])
    _assert_finite(hidden, "mask.fc1")
    activation(hidden, "relu6", out=hidden)

    mask = fully_connected(hidden, t["mask.fc2.w"], t["mask.fc2.b"],
                           layer="mask.fc2", out=out["mask.fc2"])
    _assert_finite(mask, "mask.fc2")
    activation(mask, "sigmoid", out=mask)

    return ModelOutput(mask=mask.copy(), dtd=dtd.copy(), embedding=embedding.copy())
