"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def speech_like(duration: float, rng: np.random.Generator, fs: int = 16000,
                burst_s: float = 0.25, pause_s: float = 0.2, level: float = 0.3) -> np.ndarray:
    """Synthetic speech-like test signal: enveloped noise bursts with pauses.

    Alternates tapered bursts of low-pass-ish noise (random per-burst
    colouring) with silent gaps, loosely mimicking syllable/pause structure.
    Deterministic given the generator state.
    """
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        b = int(round(burst_s * (0.5 + rng.random()) * fs))
        p = int(round(pause_s * (0.5 + rng.random()) * fs))
        b = min(b, n - pos)
        if b > 8:
            noise = rng.standard_normal(b)
            smooth = int(1 + 7 * rng.random())
            if smooth > 1:
                kernel = np.ones(smooth) / smooth
                noise = np.convolve(noise, kernel, mode="same")
            envelope = np.sin(np.pi * np.arange(b) / b) ** 2
            tone = np.sin(2 * np.pi * (100 + 300 * rng.random()) *
                          np.arange(b) / fs + rng.random() * 6.28)
            out[pos: pos + b] = (0.7 * noise + 0.5 * tone) * envelope
        pos += b + p
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= level / peak
    return out
