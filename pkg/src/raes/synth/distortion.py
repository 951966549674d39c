"""Loudspeaker-path distortions applied to far-end signals.

The echo a microphone picks up is not the clean far-end signal: the power
amplifier clips, the loudspeaker driver compresses asymmetrically, and the
playback path adds a processing delay. These three effects are modeled here
as a hard clip, a memoryless sigmoid nonlinearity, and a sample shift.
"""

from __future__ import annotations

import numpy as np

from raes.audio import DEFAULT_SAMPLE_RATE, AudioSignal

NONLINEARITY_MODES = ("corrected", "as_written")


def _data(signal) -> np.ndarray:
    if isinstance(signal, AudioSignal):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def _like(template, samples: np.ndarray):
    if isinstance(template, AudioSignal):
        return AudioSignal(samples, template.sample_rate)
    return samples


def hard_clip(u, u_max: float):
    """Clamp the signal to ``[-u_max, u_max]``, simulating amplifier clipping.

    Parameters
    ----------
    u : AudioSignal or np.ndarray
        Far-end signal.
    u_max : float
        Clip level; must satisfy ``0 < u_max <= 1``.
    """
    if not 0.0 < u_max <= 1.0:
        raise ValueError(f"u_max must be in (0, 1], got {u_max}")
    return _like(u, np.clip(_data(u), -u_max, u_max))


def loudspeaker_nonlinearity(u_clip, gain: float, a_pos: float, a_neg: float,
                             mode: str = "corrected"):
    """Memoryless sigmoid distortion of the (possibly clipped) far-end signal.

    Each sample is passed through ``b = 1.5*u - 0.3*u**2`` and then a scaled
    sigmoid whose slope differs for positive and negative ``b`` (asymmetric
    driver compression):

    - ``corrected`` mode: ``gain * (2 / (1 + exp(-a*b)) - 1)`` — an odd-ish
      saturating curve with zero output at silence (the default).
    - ``as_written`` mode: ``gain * (2 / (1 + exp(-a*b)))`` — the same curve
      without the centering term; silence maps to the constant ``gain``.
      Kept selectable for fidelity to the original formulation.

    Parameters
    ----------
    u_clip : AudioSignal or np.ndarray
        Input signal (typically after :func:`hard_clip`).
    gain : float
        Output scale γ.
    a_pos, a_neg : float
        Sigmoid slopes used where ``b > 0`` / ``b <= 0``.
    mode : str
        ``"corrected"`` or ``"as_written"``.
    """
    if mode not in NONLINEARITY_MODES:
        raise ValueError(f"mode must be one of {NONLINEARITY_MODES}, got {mode!r}")
    x = _data(u_clip)
    b = 1.5 * x - 0.3 * x * x
    a = np.where(b > 0, a_pos, a_neg)
    sig = 2.0 / (1.0 + np.exp(-a * b))
    out = gain * (sig - 1.0) if mode == "corrected" else gain * sig
    return _like(u_clip, out)


def apply_delay(u, delay_ms: float, sample_rate: int | None = None):
    """Shift the signal later by ``delay_ms`` with a zero prefix.

    The output has the same length as the input (the shifted-out tail is
    truncated), simulating the fixed playback-path delay between the far-end
    reference and the echo it produces.

    Parameters
    ----------
    u : AudioSignal or np.ndarray
        Signal to delay.
    delay_ms : float
        Delay in milliseconds; must be non-negative. Rounded to the nearest
        whole sample.
    sample_rate : int, optional
        Only used for bare arrays; ``AudioSignal`` inputs carry their own.
    """
    if delay_ms < 0:
        raise ValueError(f"delay_ms must be non-negative, got {delay_ms}")
    if isinstance(u, AudioSignal):
        fs = u.sample_rate
    else:
        fs = sample_rate if sample_rate is not None else DEFAULT_SAMPLE_RATE
    x = _data(u)
    shift = int(round(delay_ms * fs / 1000.0))
    out = np.zeros_like(x)
    if shift < x.shape[0]:
        out[shift:] = x[: x.shape[0] - shift] if shift else x
    return _like(u, out)
