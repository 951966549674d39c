"""End-to-end echo suppression: adaptive filter → network mask → synthesis.

Per 4 ms hop the pipeline analyzes mic and far-end windows, runs one
subband NLMS step, builds the stacked log-spectrum feature tensor, runs the
network, optionally applies the double-talk gate, scales the filter-output
bins by the mask, and overlap-adds the synthesized block.

Streaming contract: every pushed chunk returns exactly as many output
samples as it contained; the content is delayed by one analysis window
(128 samples), so ``out[n]`` holds the processed signal at time ``n - 128``
and the first 128 emitted samples are zeros. The offline helpers feed a
window of flush zeros and drop the delay so file outputs align with their
inputs sample-for-sample.

The filter-output spectrum is the carrier for the near-end estimate — the
mask scales the retained bins, and the mic frame's DC term rides through to
synthesis unchanged (the adaptive filter and mask only act on bins 1..64).
"""

from __future__ import annotations

from collections import deque

import numpy as np

from raes.audio import AudioSignal, read_wav, write_wav
from raes.features import FrameHistory, build_feature, log_spectrum
from raes.nlms import NlmsState, nlms_step
from raes.nn import Scratch, WeightBundle, forward, load_weights
from raes.stft import StftConfig, analyze_blocks, synth_frame

DEFAULT_DTD_CONFIDENCE = 0.9
PSM_EPS = 1e-9


def psm_target(clean: np.ndarray, reference: np.ndarray, eps: float = PSM_EPS) -> np.ndarray:
    """Phase-sensitive mask of ``clean`` against ``reference``, per bin:
    ``clamp(|S|/max(|E|, eps) · cos(θ_S − θ_E), 0, 1)``.

    Accepts single frames or stacked frame arrays; shapes broadcast
    elementwise.
    """
    clean = np.asarray(clean)
    reference = np.asarray(reference)
    ratio = np.abs(clean) / np.maximum(np.abs(reference), eps)
    cos = np.cos(np.angle(clean) - np.angle(reference))
    return np.clip(ratio * cos, 0.0, 1.0)


def apply_mask(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scale complex bins by a real mask: the near-end estimate
    ``Ŝ = g · E`` with the filter output as carrier."""
    return np.asarray(frame) * np.asarray(mask)


def dtd_postprocess(mask: np.ndarray, dtd: np.ndarray,
                    confidence: float = DEFAULT_DTD_CONFIDENCE) -> np.ndarray:
    """Override the mask when the detector is confident about single talk.

    Far-end single talk (state 1) at or above ``confidence`` zeroes the
    mask; near-end single talk (state 0) forces it to one; anything else —
    double talk or low confidence — leaves the mask untouched. Idempotent.
    """
    if not 0.5 <= confidence <= 1.0:
        raise ValueError(f"confidence must be in [0.5, 1], got {confidence}")
    dtd = np.asarray(dtd)
    state = int(np.argmax(dtd))
    if dtd[state] >= confidence:
        if state == 1:
            return np.zeros_like(mask)
        if state == 0:
            return np.ones_like(mask)
    return mask


class PipelineState:
    """All per-stream state: analysis windows, filter, feature history,
    network scratch, pending input/output buffering.

    One state per stream; it may move between threads but must not be
    shared concurrently. ``latency`` is the fixed algorithmic delay in
    samples (one analysis window).
    """

    def __init__(self, weights: WeightBundle | None = None,
                 config: StftConfig | None = None,
                 dtd_gate_confidence: float | None = None,
                 af_only: bool = False) -> None:
        if weights is None and not af_only:
            raise ValueError("a weight bundle is required unless af_only is set")
        if dtd_gate_confidence is not None and not 0.5 <= dtd_gate_confidence <= 1.0:
            raise ValueError(
                f"dtd gate confidence must be in [0.5, 1], got {dtd_gate_confidence}"
            )
        self.config = config or StftConfig()
        self.weights = weights
        self.af_only = af_only
        self.dtd_gate_confidence = dtd_gate_confidence
        self.nlms = NlmsState.create(n_bins=self.config.n_bins)
        self.history = FrameHistory(n_bins=self.config.n_bins)
        self.scratch = Scratch(weights.architecture) if weights is not None else None
        self.frames_processed = 0

        self._mic_window = np.zeros(self.config.window_size)
        self._far_window = np.zeros(self.config.window_size)
        self._blocks_seen = 0
        self._in_mic = np.zeros(0)
        self._in_far = np.zeros(0)
        self._ola_tail = np.zeros(self.config.hop)
        self._ready: deque[np.ndarray] = deque()
        self._head_offset = 0
        self._zeros_remaining = self.config.window_size  # initial latency

    @property
    def latency(self) -> int:
        """Algorithmic delay in samples: exactly one analysis window."""
        return self.config.window_size

    def _process_frame(self) -> np.ndarray:
        """One hop of work on the full analysis windows; returns the 64
        output samples this frame finalizes."""
        cfg = self.config
        mic_spec = analyze_blocks(self._mic_window, cfg)
        far_bins = np.asarray(analyze_blocks(self._far_window, cfg))
        error, _, _ = nlms_step(np.asarray(mic_spec), far_bins, self.nlms)
        if self.af_only:
            masked = error
        else:
            self.history.push(log_spectrum(error), log_spectrum(far_bins))
            output = forward(build_feature(self.history), self.weights, self.scratch)
            mask = output.mask
            if self.dtd_gate_confidence is not None:
                mask = dtd_postprocess(mask, output.dtd, self.dtd_gate_confidence)
            masked = apply_mask(error, mask)
        block = synth_frame(masked, cfg, dc=float(np.real(mic_spec.dc).ravel()[0]))
        finalized = self._ola_tail + block[: cfg.hop]
        self._ola_tail = block[cfg.hop:].copy()
        self.frames_processed += 1
        return finalized


def _samples(chunk) -> np.ndarray:
    if isinstance(chunk, AudioSignal):
        return chunk.samples
    return np.asarray(chunk, dtype=np.float64)


def process_stream(mic_chunk, farend_chunk, state: PipelineState):
    """Push equal-length mic/far-end chunks; pull the same number of
    processed samples (content delayed by ``state.latency``).

    Chunks may be :class:`AudioSignal` or plain sample arrays of any
    length; leftover samples smaller than one hop stay buffered. Output is
    bit-identical regardless of how the stream is chunked. Returns
    ``(out_chunk, state)`` with ``out_chunk`` matching the input type.
    """
    mic = _samples(mic_chunk)
    far = _samples(farend_chunk)
    if mic.shape != far.shape:
        raise ValueError(f"chunk length mismatch: mic {mic.shape[0]} vs far-end {far.shape[0]}")
    n = mic.shape[0]
    hop = state.config.hop

    buf_mic = np.concatenate([state._in_mic, mic])
    buf_far = np.concatenate([state._in_far, far])
    pos = 0
    while buf_mic.shape[0] - pos >= hop:
        state._mic_window[:hop] = state._mic_window[hop:]
        state._mic_window[hop:] = buf_mic[pos: pos + hop]
        state._far_window[:hop] = state._far_window[hop:]
        state._far_window[hop:] = buf_far[pos: pos + hop]
        state._blocks_seen += 1
        if state._blocks_seen >= 2:  # a full window has been filled
            state._ready.append(state._process_frame())
        pos += hop
    state._in_mic = buf_mic[pos:].copy()
    state._in_far = buf_far[pos:].copy()

    out = np.zeros(n)
    filled = min(state._zeros_remaining, n)
    state._zeros_remaining -= filled
    while filled < n:
        head = state._ready[0]
        take = min(head.shape[0] - state._head_offset, n - filled)
        out[filled: filled + take] = head[state._head_offset: state._head_offset + take]
        state._head_offset += take
        filled += take
        if state._head_offset == head.shape[0]:
            state._ready.popleft()
            state._head_offset = 0
    if isinstance(mic_chunk, AudioSignal):
        return AudioSignal(out, mic_chunk.sample_rate), state
    return out, state


def process_signals(mic, farend, weights: WeightBundle | None = None,
                    af_only: bool = False, dtd_gate_confidence: float | None = None,
                    config: StftConfig | None = None, chunk_size: int = 4096) -> np.ndarray:
    """Offline convenience: process whole signals and return output aligned
    to the input (the streaming delay is fed through and dropped)."""
    mic_s = _samples(mic)
    far_s = _samples(farend)
    if mic_s.shape != far_s.shape:
        raise ValueError(
            f"mic and far-end lengths differ: {mic_s.shape[0]} vs {far_s.shape[0]}"
        )
    state = PipelineState(weights=weights, config=config,
                          dtd_gate_confidence=dtd_gate_confidence, af_only=af_only)
    flush = np.zeros(state.latency)
    mic_fed = np.concatenate([mic_s, flush])
    far_fed = np.concatenate([far_s, flush])
    parts = []
    for start in range(0, mic_fed.shape[0], chunk_size):
        out, _ = process_stream(mic_fed[start: start + chunk_size],
                                far_fed[start: start + chunk_size], state)
        parts.append(out)
    return np.concatenate(parts)[state.latency:]


def process_file(mic_path, farend_path, out_path, model_path=None,
                 af_only: bool = False, dtd_gate_confidence: float | None = None) -> AudioSignal:
    """File-level API: (mic.wav, farend.wav, model) → out.wav, aligned."""
    mic = read_wav(mic_path)
    far = read_wav(farend_path)
    if len(mic) != len(far):
        raise ValueError(
            f"mic and far-end lengths differ: {len(mic)} ({mic_path}) vs "
            f"{len(far)} ({farend_path})"
        )
    weights = None
    if not af_only:
        if model_path is None:
            raise ValueError("a model path is required unless af_only is set")
        weights = load_weights(str(model_path))
    out = process_signals(mic, far, weights=weights, af_only=af_only,
                          dtd_gate_confidence=dtd_gate_confidence)
    signal = AudioSignal(out, mic.sample_rate)
    write_wav(out_path, signal)
    return signal
