"""The network architecture table — the normative layer-by-layer definition.

The model maps a 2×40×32 feature tensor to a 64-bin suppression mask and a
3-state double-talk posterior:

* a reserved elementwise affine normalization of the input (identity by
  default — a forward-compatibility slot carried in every weight file);
* a 3×3 stem convolution, then four inverted-residual bottlenecks
  (pointwise expand → 3×3 depthwise → pointwise project, expansion 4);
* a detector branch: global average pool → FC to a 32-dim embedding →
  FC + softmax over {near-end single, far-end single, double talk};
* a gate: FC from the embedding to per-channel sigmoid gains multiplied
  into the trunk (the detector conditions the mask features);
* the mask branch: gated trunk flattened → FC 1920→256 → FC 256→64 +
  sigmoid.

Everything that needs to agree between the runtime, the weight file, and
any external trainer hangs off this table: expected tensor names/shapes,
the architecture fingerprint, and the analytic FLOPs count.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from math import prod

INPUT_SHAPE = (2, 40, 32)
MASK_BINS = 64
DTD_CLASSES = 3
EMBEDDING_DIM = 32


@dataclass(frozen=True)
class LayerSpec:
    """One row of the architecture table.

    ``kind`` is one of conv | depthwise | fc | norm | pool | gate | flatten;
    only conv/depthwise/fc/norm layers own weight tensors.
    """

    name: str
    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    activation: str = "linear"

    def canonical(self) -> str:
        return (
            f"{self.name}|{self.kind}"
            f"|in={'x'.join(map(str, self.in_shape))}"
            f"|out={'x'.join(map(str, self.out_shape))}"
            f"|k={self.kernel}|s={self.stride}|p={self.padding}"
            f"|act={self.activation}"
        )

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        """Tensor names and shapes owned by this layer (empty if none)."""
        if self.kind == "conv":
            c_out, c_in = self.out_shape[0], self.in_shape[0]
            return {
                f"{self.name}.w": (c_out, c_in, self.kernel, self.kernel),
                f"{self.name}.b": (c_out,),
            }
        if self.kind == "depthwise":
            c = self.in_shape[0]
            return {
                f"{self.name}.w": (c, 1, self.kernel, self.kernel),
                f"{self.name}.b": (c,),
            }
        if self.kind == "fc":
            return {
                f"{self.name}.w": (self.out_shape[0], self.in_shape[0]),
                f"{self.name}.b": (self.out_shape[0],),
            }
        if self.kind == "norm":
            return {
                f"{self.name}.scale": self.in_shape,
                f"{self.name}.offset": self.in_shape,
            }
        return {}

    def op_flops(self) -> int:
        """Cost of the layer's arithmetic alone: 2·MACs for conv/fc kinds,
        1-2 ops per element for the elementwise/pool kinds. Activation cost
        is tallied separately by :meth:`activation_flops`."""
        out_elems = prod(self.out_shape)
        if self.kind == "conv":
            c_out, c_in = self.out_shape[0], self.in_shape[0]
            spatial = prod(self.out_shape[1:])
            return 2 * c_out * c_in * self.kernel ** 2 * spatial
        if self.kind == "depthwise":
            c = self.in_shape[0]
            spatial = prod(self.out_shape[1:])
            return 2 * c * self.kernel ** 2 * spatial
        if self.kind == "fc":
            return 2 * self.in_shape[0] * self.out_shape[0]
        if self.kind == "norm":
            return 2 * out_elems  # scale + offset
        if self.kind == "pool":
            return prod(self.in_shape) + out_elems  # sums + divides
        if self.kind == "gate":
            return out_elems  # per-element multiply
        return 0  # flatten

    def activation_flops(self) -> int:
        """Activations counted at one op per output element."""
        return prod(self.out_shape) if self.activation != "linear" else 0

    def flops(self) -> int:
        return self.op_flops() + self.activation_flops()


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _build_layers() -> tuple[LayerSpec, ...]:
    layers: list[LayerSpec] = []
    c, h, w = INPUT_SHAPE
    layers.append(LayerSpec("feat_norm", "norm", (c, h, w), (c, h, w)))

    def conv(name: str, c_in: int, c_out: int, h: int, w: int, kernel: int,
             stride: int, padding: int, act: str) -> tuple[int, int]:
        ho, wo = _conv_out(h, kernel, stride, padding), _conv_out(w, kernel, stride, padding)
        layers.append(LayerSpec(name, "conv", (c_in, h, w), (c_out, ho, wo),
                                kernel, stride, padding, act))
        return ho, wo

    def dwise(name: str, c: int, h: int, w: int, stride: int) -> tuple[int, int]:
        ho, wo = _conv_out(h, 3, stride, 1), _conv_out(w, 3, stride, 1)
        layers.append(LayerSpec(name, "depthwise", (c, h, w), (c, ho, wo),
                                3, stride, 1, "relu6"))
        return ho, wo

    h, w = conv("stem", 2, 16, h, w, kernel=3, stride=2, padding=1, act="relu6")
    c = 16
    for i, (c_out, stride) in enumerate([(24, 2), (32, 2), (64, 1), (96, 1)], start=1):
        expanded = 4 * c
        conv(f"irb{i}.expand", c, expanded, h, w, kernel=1, stride=1, padding=0, act="relu6")
        h, w = dwise(f"irb{i}.dw", expanded, h, w, stride)
        conv(f"irb{i}.project", expanded, c_out, h, w, kernel=1, stride=1, padding=0, act="linear")
        c = c_out

    trunk = (c, h, w)
    layers.append(LayerSpec("dtd.pool", "pool", trunk, (c,)))
    layers.append(LayerSpec("dtd.fc1", "fc", (c,), (EMBEDDING_DIM,), activation="relu6"))
    layers.append(LayerSpec("dtd.fc2", "fc", (EMBEDDING_DIM,), (DTD_CLASSES,), activation="softmax"))
    layers.append(LayerSpec("gate.fc", "fc", (EMBEDDING_DIM,), (c,), activation="sigmoid"))
    layers.append(LayerSpec("gate.apply", "gate", trunk, trunk))
    flat = prod(trunk)
    layers.append(LayerSpec("mask.flatten", "flatten", trunk, (flat,)))
    layers.append(LayerSpec("mask.fc1", "fc", (flat,), (256,), activation="relu6"))
    layers.append(LayerSpec("mask.fc2", "fc", (256,), (MASK_BINS,), activation="sigmoid"))
    return tuple(layers)


@dataclass(frozen=True)
class Architecture:
    """An ordered layer table with derived identity and accounting."""

    layers: tuple[LayerSpec, ...]

    def canonical_table(self) -> str:
        """Stable textual form of the table; the fingerprint hashes this."""
        return "\n".join(layer.canonical() for layer in self.layers)

    def fingerprint(self) -> bytes:
        """32-byte identity embedded in every compatible weight file."""
        return hashlib.sha256(self.canonical_table().encode("utf-8")).digest()

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        """All expected tensor names and shapes, in table order."""
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.layers:
            shapes.update(layer.weight_shapes())
        return shapes

    def parameter_count(self) -> int:
        return sum(prod(s) for s in self.weight_shapes().values())

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}")


ARCHITECTURE = Architecture(_build_layers())
