"""Mono audio container and WAV file I/O.

All signals in this package are mono sample sequences with amplitudes in
``[-1, 1]``. WAV files are accepted in 16-bit PCM or 32-bit float form at a
single sample rate; anything else is rejected with a clear error so format
problems surface at the boundary instead of deep inside the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioSignal:
    """A mono audio signal.

    Parameters
    ----------
    samples : np.ndarray
        1-D float array of amplitudes, nominally within ``[-1, 1]``.
    sample_rate : int
        Sampling frequency in Hz (default 16000).
    """

    samples: np.ndarray = field(repr=False)
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected a mono (1-D) signal, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must all be finite")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Signal duration in seconds."""
        return len(self) / self.sample_rate


def read_wav(path: str | Path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> AudioSignal:
    """Read a mono WAV file (16-bit PCM or 32-bit float).

    Parameters
    ----------
    path : str or Path
        File to read.
    expected_rate : int
        Required sample rate; a mismatch raises ``ValueError``.

    Returns
    -------
    AudioSignal
        Samples as float64 in [-1, 1] (PCM scaled by 1/32768).
    """
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(
            f"{path}: expected mono audio, got {data.ndim} dimensions "
            f"({data.shape[1] if data.ndim > 1 else 0} channels)"
        )
    if rate != expected_rate:
        raise ValueError(f"{path}: expected {expected_rate} Hz, got {rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(
            f"{path}: unsupported WAV sample format {data.dtype}; "
            "expected 16-bit PCM or 32-bit float"
        )
    return AudioSignal(samples, rate)


def write_wav(path: str | Path, signal: AudioSignal | np.ndarray,
              sample_rate: int | None = None) -> None:
    """Write a mono WAV file as 32-bit float.

    Accepts either an :class:`AudioSignal` or a bare array (in which case
    ``sample_rate`` defaults to 16 kHz).
    """
    if isinstance(signal, AudioSignal):
        samples = signal.samples
        rate = signal.sample_rate
    else:
        samples = np.asarray(signal)
        rate = sample_rate if sample_rate is not None else DEFAULT_SAMPLE_RATE
    wavfile.write(str(path), rate, samples.astype(np.float32))
