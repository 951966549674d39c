"""Synthetic mixture generation.

Builds training/evaluation material for the echo suppressor: far-end signals
are distorted the way a cheap loudspeaker path distorts them (clipping, a
memoryless sigmoid nonlinearity, system delay), convolved with simulated room
impulse responses, and mixed with near-end speech at a controlled
signal-to-echo ratio. Each mixture ships with frame-level double-talk labels.
"""

from __future__ import annotations

from raes.synth.distortion import apply_delay, hard_clip, loudspeaker_nonlinearity
from raes.synth.rir import RoomSpec, convolve_rir, generate_rir
from raes.synth.mixer import (
    ACTIVITY_THRESHOLD,
    DTD_DOUBLE_TALK,
    DTD_FAR_END,
    DTD_NEAR_END,
    dtd_labels,
    frame_activity,
    labels_from_activity,
    measure_ser,
    mix_at_ser,
)
from raes.synth.dataset import (
    DEFAULT_ROOM_DIMS,
    MixtureRecord,
    SynthParams,
    draw_params,
    draw_room,
    load_manifest,
    run_length_decode,
    run_length_encode,
    synth_dataset,
    synthesize_record,
)
from raes.synth.sources import build_corpus, list_wavs, music_like, speech_like

__all__ = [
    "ACTIVITY_THRESHOLD",
    "DEFAULT_ROOM_DIMS",
    "DTD_DOUBLE_TALK",
    "DTD_FAR_END",
    "DTD_NEAR_END",
    "MixtureRecord",
    "RoomSpec",
    "SynthParams",
    "apply_delay",
    "build_corpus",
    "convolve_rir",
    "draw_params",
    "draw_room",
    "dtd_labels",
    "frame_activity",
    "generate_rir",
    "hard_clip",
    "labels_from_activity",
    "list_wavs",
    "load_manifest",
    "measure_ser",
    "mix_at_ser",
    "music_like",
    "run_length_decode",
    "run_length_encode",
    "speech_like",
    "synth_dataset",
    "synthesize_record",
]
