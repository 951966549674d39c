"""Training-tensor extraction: features, mask targets, and labels per frame.

The trainer must see exactly the tensors the runtime would compute — the
adaptive filter's error spectra drive both the feature history and the
phase-sensitive mask targets, so any drift between training-time and
inference-time extraction poisons the learned mapping. This module runs the
same filter/feature code the streaming pipeline uses, frame-aligned with the
short-time analysis, and serializes the result to a compact binary dump
(``.raet``) that non-Python consumers can read byte-for-byte.

Dump layout (little-endian): magic ``RAET``, version ``u32``, frame count
``u32``, then ``float32`` features ``[T, 2, 40, 32]``, ``float32`` mask
targets ``[T, 64]``, and ``uint8`` labels ``[T]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from raes.audio import AudioSignal, read_wav
from raes.features import FEATURE_SHAPE, FrameHistory, build_feature, log_spectrum
from raes.nlms import NlmsState, nlms_step
from raes.pipeline import psm_target
from raes.stft import StftConfig, stft
from raes.synth.dataset import load_manifest
from raes.synth.mixer import dtd_labels

TARGETS_MAGIC = b"RAET"
TARGETS_VERSION = 1


@dataclass(frozen=True)
class TrainingTargets:
    """Frame-aligned training tensors for one mixture record.

    ``features[l]`` is the network input when frame ``l`` is current,
    ``masks[l]`` the clamped phase-sensitive mask target against the
    adaptive filter's error spectrum, and ``labels[l]`` the double-talk
    state.
    """

    features: np.ndarray  # (T, 2, 40, 32) float32
    masks: np.ndarray     # (T, 64) float32
    labels: np.ndarray    # (T,) uint8

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float32)
        masks = np.ascontiguousarray(self.masks, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        t = features.shape[0] if features.ndim else 0
        if features.shape != (t, *FEATURE_SHAPE):
            raise ValueError(f"features must be (T, {FEATURE_SHAPE}), got {features.shape}")
        if masks.shape != (t, 64):
            raise ValueError(f"masks must be ({t}, 64), got {masks.shape}")
        if labels.shape != (t,):
            raise ValueError(f"labels must be ({t},), got {labels.shape}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]


def _samples(signal) -> np.ndarray:
    if isinstance(signal, AudioSignal):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def build_targets(mic, farend, nearend, echo=None,
                  cfg: StftConfig | None = None) -> TrainingTargets:
    """Extract per-frame training tensors from one mixture.

    Runs the subband adaptive filter over the (mic, far-end) pair exactly as
    the streaming pipeline does — same windows, same hop, same update — and
    pairs each frame's feature tensor with the mask target
    ``psm_target(S, E)`` (near-end spectrum against filter error) and the
    double-talk label.

    Parameters
    ----------
    mic, farend, nearend : AudioSignal or np.ndarray
        The mixture ``d``, reference ``u``, and near-end ``s``; equal lengths.
    echo : AudioSignal or np.ndarray, optional
        The echo ``y`` for labeling; defaults to ``mic - nearend``.
    cfg : StftConfig, optional
        Analysis configuration.
    """
    cfg = cfg if cfg is not None else StftConfig()
    d = _samples(mic)
    u = _samples(farend)
    s = _samples(nearend)
    if not d.shape[0] == u.shape[0] == s.shape[0]:
        raise ValueError(
            f"signal lengths differ: mic {d.shape[0]}, farend {u.shape[0]}, "
            f"nearend {s.shape[0]}"
        )
    y = d - s if echo is None else _samples(echo)
    if y.shape[0] != d.shape[0]:
        raise ValueError(f"echo length {y.shape[0]} does not match mic {d.shape[0]}")

    frames_d = np.asarray(stft(d, cfg))
    frames_u = np.asarray(stft(u, cfg))
    frames_s = np.asarray(stft(s, cfg))
    t = frames_d.shape[0]

    nlms = NlmsState.create(n_bins=cfg.n_bins)
    history = FrameHistory(n_bins=cfg.n_bins)
    features = np.empty((t, *FEATURE_SHAPE), dtype=np.float32)
    masks = np.empty((t, cfg.n_bins), dtype=np.float32)
    for l in range(t):
        error, _, nlms = nlms_step(frames_d[l], frames_u[l], nlms)
        history.push(log_spectrum(error), log_spectrum(frames_u[l]))
        features[l] = build_feature(history)
        masks[l] = psm_target(frames_s[l], error)

    labels = dtd_labels(s, y, cfg)
    return TrainingTargets(features=features, masks=masks, labels=labels)


def save_targets(targets: TrainingTargets, path) -> None:
    """Serialize a :class:`TrainingTargets` to the ``.raet`` binary layout."""
    t = len(targets)
    with open(path, "wb") as fh:
        fh.write(TARGETS_MAGIC)
        fh.write(struct.pack("<II", TARGETS_VERSION, t))
        fh.write(np.ascontiguousarray(targets.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(targets.masks, dtype="<f4").tobytes())
        fh.write(targets.labels.tobytes())


def load_targets(path) -> TrainingTargets:
    """Read a ``.raet`` dump back; validates magic, version, and size."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != TARGETS_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    version, t = struct.unpack_from("<II", blob, 4)
    if version != TARGETS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    feat_bytes = t * int(np.prod(FEATURE_SHAPE)) * 4
    mask_bytes = t * 64 * 4
    expected = 12 + feat_bytes + mask_bytes + t
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {t} frames, got {len(blob)}")
    offset = 12
    features = np.frombuffer(blob, "<f4", count=t * int(np.prod(FEATURE_SHAPE)),
                             offset=offset).reshape(t, *FEATURE_SHAPE).copy()
    offset += feat_bytes
    masks = np.frombuffer(blob, "<f4", count=t * 64, offset=offset).reshape(t, 64).copy()
    offset += mask_bytes
    labels = np.frombuffer(blob, np.uint8, count=t, offset=offset).copy()
    return TrainingTargets(features=features, masks=masks, labels=labels)


def dump_targets(manifest_path, out_dir=None) -> list[Path]:
    """Extract and save training tensors for every record in a manifest.

    Writes one ``<record dir>.raet`` per record next to the manifest (or
    under ``out_dir``) and returns the written paths in record order.
    """
    manifest_path = Path(manifest_path)
    entries = load_manifest(manifest_path)
    base = manifest_path.parent
    out = Path(out_dir) if out_dir is not None else base
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in entries:
        mic = read_wav(base / entry["files"]["d"], entry["sample_rate"])
        farend = read_wav(base / entry["files"]["u"], entry["sample_rate"])
        nearend = read_wav(base / entry["files"]["s"], entry["sample_rate"])
        echo = read_wav(base / entry["files"]["y"], entry["sample_rate"])
        targets = build_targets(mic, farend, nearend, echo)
        path = out / f"{entry['dir']}.raet"
        save_targets(targets, path)
        written.append(path)
    return written
