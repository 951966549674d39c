"""Short-time spectral analysis and overlap-add synthesis.

Frames are rows of a complex array: ``frames[l, :]`` holds the 64 retained
bins (bins 1..64 of a 128-point transform — DC discarded, Nyquist kept) of
the analysis frame starting at sample ``l * hop``. The window is a
square-root Hann at 50% overlap, satisfying the constant-overlap-add
identity ``w²[n] + w²[n + hop] = 1``.

All processing (adaptive filtering, features, masking) operates on the 64
retained bins. The analysis result additionally carries each frame's DC term
(:class:`SpectralFrames.dc`) so that analysis→synthesis round-trips are
exact; 64 complex bins alone cannot represent a 128-sample block, and
zeroing DC on synthesis injects errors around 1e-1 for broadband signals.
Synthesizing a plain frame array (one without a DC record — e.g. frames
built by masking) reconstructs with DC = 0, which is the behavior the
processing path wants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from raes.audio import AudioSignal


def sqrt_hann_window(size: int) -> np.ndarray:
    """Square-root periodic Hann window: ``w[n] = sin(pi * n / size)``.

    At 50% overlap this satisfies ``w[n]**2 + w[n + size//2]**2 == 1``.
    """
    return np.sin(np.pi * np.arange(size) / size)


class SpectralFrames(np.ndarray):
    """Complex ``(frames, 64)`` array of retained bins with a DC side record.

    Behaves as a normal ndarray everywhere; ``dc`` holds the per-frame DC
    terms of the analysis so :func:`istft` can reconstruct exactly. Slicing
    or reshaping drops the record (the result is no longer a full analysis).
    """

    def __new__(cls, bins: np.ndarray, dc: np.ndarray | None = None) -> "SpectralFrames":
        obj = np.asarray(bins).view(cls)
        obj.dc = dc
        return obj

    def __array_finalize__(self, obj) -> None:
        if obj is None:
            return
        dc = getattr(obj, "dc", None)
        self.dc = dc if (dc is not None and self.shape == getattr(obj, "shape", None)) else None


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis configuration.

    Parameters
    ----------
    window_size : int
        Window length K in samples (default 128). The transform length
        equals the window length.
    hop : int
        Hop size in samples; must equal ``window_size // 2`` (50% overlap).
    """

    window_size: int = 128
    hop: int = 64
    window: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.window_size <= 0 or self.window_size % 2 != 0:
            raise ValueError(f"window_size must be a positive even number, got {self.window_size}")
        if self.hop != self.window_size // 2:
            raise ValueError(
                f"hop must be window_size/2 (50% overlap), got hop={self.hop} "
                f"for window_size={self.window_size}"
            )
        window = sqrt_hann_window(self.window_size)
        overlap = window[: self.hop] ** 2 + window[self.hop:] ** 2
        if not np.allclose(overlap, 1.0, atol=1e-12):
            raise ValueError("window does not satisfy the constant-overlap-add condition")
        object.__setattr__(self, "window", window)

    @property
    def n_bins(self) -> int:
        """Number of retained bins (DC discarded, Nyquist kept)."""
        return self.window_size // 2

    def frame_count(self, n_samples: int) -> int:
        """Number of full analysis frames in a signal of ``n_samples``."""
        if n_samples < self.window_size:
            return 0
        return (n_samples - self.window_size) // self.hop + 1


def analyze_blocks(blocks: np.ndarray, cfg: StftConfig) -> SpectralFrames:
    """Windowed transform of window-length block(s) into retained bins + DC."""
    if blocks.shape[-1] != cfg.window_size:
        raise ValueError(
            f"block length {blocks.shape[-1]} != window_size {cfg.window_size}"
        )
    spectrum = np.fft.rfft(blocks * cfg.window, n=cfg.window_size)
    return SpectralFrames(spectrum[..., 1:], dc=np.ascontiguousarray(spectrum[..., 0]))


def frame_spectrum(block: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """The 64 retained bins of one window-length block (processing view)."""
    return np.asarray(analyze_blocks(block, cfg))


def synth_frame(bins: np.ndarray, cfg: StftConfig, dc: np.ndarray | float = 0.0) -> np.ndarray:
    """Windowed time-domain block for frame(s) of retained bins.

    Rebuilds the conjugate-symmetric spectrum (DC from ``dc``, zero by
    default), inverse-transforms, and applies the synthesis window.
    Overlap-adding these blocks at ``hop`` spacing completes the synthesis.
    """
    bins = np.asarray(bins)
    full = np.zeros(bins.shape[:-1] + (cfg.n_bins + 1,), dtype=np.complex128)
    full[..., 0] = dc
    full[..., 1:] = bins
    block = np.fft.irfft(full, n=cfg.window_size)
    return block * cfg.window


def stft(signal: AudioSignal | np.ndarray, cfg: StftConfig | None = None) -> SpectralFrames:
    """Analyze a signal into overlapping spectral frames.

    Parameters
    ----------
    signal : AudioSignal or np.ndarray
        Input samples; must span at least one window.
    cfg : StftConfig, optional
        Analysis configuration (default: 128-sample window, 64-sample hop).

    Returns
    -------
    SpectralFrames
        Complex array of shape ``(frames, 64)``; row ``l`` covers samples
        ``[l*hop, l*hop + window_size)``. Carries the per-frame DC record.
    """
    cfg = cfg or StftConfig()
    x = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal, dtype=np.float64)
    if x.shape[0] < cfg.window_size:
        raise ValueError(
            f"insufficient samples: need at least {cfg.window_size}, got {x.shape[0]}"
        )
    n_frames = cfg.frame_count(x.shape[0])
    stride = x.strides[0]
    blocks = np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, cfg.window_size), strides=(cfg.hop * stride, stride)
    )
    return analyze_blocks(blocks, cfg)


def istft(frames: np.ndarray, cfg: StftConfig | None = None) -> np.ndarray:
    """Resynthesize a signal from spectral frames by overlap-add.

    Exact inverse of :func:`stft` on the fully-overlapped interior
    (samples ``[hop, n_frames*hop)``) when given the analysis result; plain
    frame arrays (no DC record) synthesize with DC = 0.

    Returns
    -------
    np.ndarray
        Float64 samples of length ``(n_frames - 1)*hop + window_size``.
    """
    cfg = cfg or StftConfig()
    dc = getattr(frames, "dc", None)
    frames = np.asarray(frames)
    if frames.ndim == 1:
        frames = frames[np.newaxis, :]
    if frames.shape[0] == 0:
        raise ValueError("empty frame sequence")
    if frames.shape[1] != cfg.n_bins:
        raise ValueError(f"expected {cfg.n_bins} bins per frame, got {frames.shape[1]}")
    n_frames = frames.shape[0]
    if dc is None:
        dc = np.zeros(n_frames)
    blocks = synth_frame(frames, cfg, dc=np.asarray(dc).reshape(n_frames))
    out = np.zeros((n_frames - 1) * cfg.hop + cfg.window_size)
    for l in range(n_frames):
        out[l * cfg.hop: l * cfg.hop + cfg.window_size] += blocks[l]
    return out
