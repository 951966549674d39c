"""Compact multi-task CNN runtime: inference only, float32, CPU."""

from __future__ import annotations

from raes.nn.arch import ARCHITECTURE, Architecture, LayerSpec
from raes.nn.model import InferenceError, ModelOutput, Scratch, forward
from raes.nn.ops import (
    activation,
    conv2d,
    depthwise_conv2d,
    fully_connected,
    inverted_residual,
)
from raes.nn.weights import (
    BadMagicError,
    DuplicateTensorError,
    FingerprintMismatchError,
    MissingTensorError,
    TensorShapeError,
    TruncatedFileError,
    UnknownTensorError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    WeightBundle,
    WeightFormatError,
    identity_mask_bundle,
    load_weights,
    random_bundle,
    save_weights,
)

__all__ = [
    "ARCHITECTURE",
    "Architecture",
    "BadMagicError",
    "DuplicateTensorError",
    "FingerprintMismatchError",
    "InferenceError",
    "LayerSpec",
    "MissingTensorError",
    "ModelOutput",
    "Scratch",
    "TensorShapeError",
    "TruncatedFileError",
    "UnknownTensorError",
    "UnsupportedDtypeError",
    "UnsupportedVersionError",
    "WeightBundle",
    "WeightFormatError",
    "activation",
    "conv2d",
    "depthwise_conv2d",
    "forward",
    "fully_connected",
    "identity_mask_bundle",
    "inverted_residual",
    "load_weights",
    "random_bundle",
    "save_weights",
]
