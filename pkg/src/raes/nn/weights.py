"""Weight-file container: a little-endian binary bundle of named tensors.

Layout::

    magic   4 bytes  b"RAES"
    version u32      (currently 1)
    arch    32 bytes sha256 fingerprint of the architecture table
    count   u32      number of tensors
    tensor  repeated:
        name_len u16, name UTF-8,
        dtype    u8  (0 = float32),
        ndim     u8, dims u32 × ndim,
        data     raw float32, C order

Every file carries the architecture fingerprint so a reader can reject
weights trained against a different layer table before touching a single
tensor. Loading validates names, shapes, and dtypes against the table and
reports each failure class as its own exception type.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from raes.nn.arch import ARCHITECTURE, Architecture

MAGIC = b"RAES"
FORMAT_VERSION = 1
_DTYPE_F32 = 0


class WeightFormatError(Exception):
    """Base class for every malformed- or mismatched-weight condition."""


class BadMagicError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


class FingerprintMismatchError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class TensorShapeError(WeightFormatError):
    pass


class MissingTensorError(WeightFormatError):
    pass


class DuplicateTensorError(WeightFormatError):
    pass


class UnknownTensorError(WeightFormatError):
    pass


class UnsupportedDtypeError(WeightFormatError):
    pass


@dataclass(frozen=True)
class WeightBundle:
    """A complete, validated set of model tensors in table order."""

    tensors: dict[str, np.ndarray]
    architecture: Architecture = field(default=ARCHITECTURE, repr=False)

    def __post_init__(self) -> None:
        expected = self.architecture.weight_shapes()
        ordered: dict[str, np.ndarray] = {}
        for name in self.tensors:
            if name not in expected:
                raise UnknownTensorError(f"tensor {name!r} is not in the architecture table")
        for name, shape in expected.items():
            if name not in self.tensors:
                raise MissingTensorError(f"tensor {name!r} missing from bundle")
            value = np.ascontiguousarray(self.tensors[name], dtype=np.float32)
            if value.shape != shape:
                raise TensorShapeError(
                    f"tensor {name!r} has shape {value.shape}, expected {shape}"
                )
            ordered[name] = value
        object.__setattr__(self, "tensors", ordered)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def block_params(self, block: str) -> dict[str, np.ndarray]:
        """Parameters of one inverted-residual block, keyed without the
        block prefix (``expand.w`` …) as the block op expects."""
        prefix = block + "."
        return {name[len(prefix):]: value
                for name, value in self.tensors.items()
                if name.startswith(prefix)}


def save_weights(bundle: WeightBundle, path: str) -> None:
    """Serialize a bundle; tensors are written in architecture-table order."""
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        bundle.architecture.fingerprint(),
        struct.pack("<I", len(bundle.tensors)),
    ]
    for name, value in bundle.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_F32, value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedFileError(
                f"file ends inside {what} (need {n} bytes at offset {self.offset}, "
                f"have {len(self.data) - self.offset})"
            )
        chunk = self.data[self.offset: self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def load_weights(path: str, architecture: Architecture = ARCHITECTURE) -> WeightBundle:
    """Read and validate a weight file.

    Raises a :class:`WeightFormatError` subclass naming the exact failure:
    bad magic, unknown version, fingerprint mismatch, truncation, an
    unsupported dtype, an unknown/duplicate/missing tensor name, or a
    shape that disagrees with the architecture table.
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    fingerprint = reader.take(32, "architecture fingerprint")
    if fingerprint != architecture.fingerprint():
        raise FingerprintMismatchError(
            "weight file was built for a different architecture "
            f"(fingerprint {fingerprint.hex()[:16]}…)"
        )
    count = reader.u32("tensor count")
    expected = architecture.weight_shapes()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u16("tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        dtype = reader.u8(f"dtype of {name!r}")
        if dtype != _DTYPE_F32:
            raise UnsupportedDtypeError(f"tensor {name!r} has dtype code {dtype}, only "
                                        f"float32 ({_DTYPE_F32}) is supported")
        ndim = reader.u8(f"rank of {name!r}")
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim, f"dims of {name!r}"))
        if name not in expected:
            raise UnknownTensorError(f"tensor {name!r} is not in the architecture table")
        if name in tensors:
            raise DuplicateTensorError(f"tensor {name!r} appears twice")
        if tuple(dims) != expected[name]:
            raise TensorShapeError(
                f"tensor {name!r} has shape {tuple(dims)}, expected {expected[name]}"
            )
        n_elems = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = reader.take(4 * n_elems, f"data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    missing = [name for name in expected if name not in tensors]
    if missing:
        raise MissingTensorError(f"weight file is missing tensors: {', '.join(missing)}")
    return WeightBundle(tensors, architecture)


def _identity_norm(shapes: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
    return {
        "feat_norm.scale": np.ones(shapes["feat_norm.scale"], dtype=np.float32),
        "feat_norm.offset": np.zeros(shapes["feat_norm.offset"], dtype=np.float32),
    }


def random_bundle(seed: int, architecture: Architecture = ARCHITECTURE) -> WeightBundle:
    """He-initialized weights with zero biases; deterministic in ``seed``.

    Meant for benchmarks and tests — the magnitudes are realistic so the
    arithmetic exercises the same code paths as trained weights.
    """
    rng = np.random.default_rng(seed)
    shapes = architecture.weight_shapes()
    tensors = _identity_norm(shapes)
    for name, shape in shapes.items():
        if name in tensors:
            continue
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
            continue
        if len(shape) == 4:  # conv / depthwise kernels: fan-in from C_in·k·k
            fan_in = shape[1] * shape[2] * shape[3]
        else:  # fc weight (out, in)
            fan_in = shape[1]
        std = np.sqrt(2.0 / fan_in)
        tensors[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return WeightBundle(tensors, architecture)


def identity_mask_bundle(architecture: Architecture = ARCHITECTURE) -> WeightBundle:
    """Weights whose forward pass is the identity suppressor: mask exactly
    1.0 in every bin and a uniform detector posterior.

    All tensors are zero except the input-normalization scale (one) and the
    final mask bias, pushed deep into sigmoid saturation so float32 rounds
    the gain to exactly 1.0.
    """
    shapes = architecture.weight_shapes()
    tensors = _identity_norm(shapes)
    for name, shape in shapes.items():
        tensors.setdefault(name, np.zeros(shape, dtype=np.float32))
    tensors["mask.fc2.b"] = np.full(shapes["mask.fc2.b"], 30.0, dtype=np.float32)
    return WeightBundle(tensors, architecture)
