"""Mixture assembly: double-talk labels and SER-controlled mixing.

A mixture is ``d = s_scaled + y``: the near-end speech scaled so that its
power relative to the echo — the signal-to-echo ratio, measured only over
frames where both are active — hits a requested target. Frame activity and
the per-frame double-talk labels both come from the same short-time spectra
the rest of the toolkit uses, thresholded at 0.001 on peak bin magnitude.
"""

from __future__ import annotations

import numpy as np

from raes.audio import AudioSignal
from raes.stft import StftConfig, stft

ACTIVITY_THRESHOLD = 1e-3

# Frame states: near-end single talk, far-end (echo) single talk, double talk.
DTD_NEAR_END = 0
DTD_FAR_END = 1
DTD_DOUBLE_TALK = 2

_SER_TOLERANCE_DB = 0.1
_PEAK_CEILING = 0.99
_MAX_SER_ROUNDS = 32


def _data(signal) -> np.ndarray:
    if isinstance(signal, AudioSignal):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def _frame_peaks_and_powers(x: np.ndarray, cfg: StftConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame peak bin magnitude and total spectral power."""
    mags = np.abs(np.asarray(stft(x, cfg)))
    if mags.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    return mags.max(axis=1), (mags ** 2).sum(axis=1)


def frame_activity(x, cfg: StftConfig | None = None) -> np.ndarray:
    """Boolean per-frame activity: peak bin magnitude above the threshold."""
    cfg = cfg if cfg is not None else StftConfig()
    peaks, _ = _frame_peaks_and_powers(_data(x), cfg)
    return peaks > ACTIVITY_THRESHOLD


def labels_from_activity(s_active: np.ndarray, y_active: np.ndarray) -> np.ndarray:
    """Double-talk labels from per-frame activity of near end and echo.

    Frames where only the near end is active are labeled 0, echo-only
    frames 1, and everything else — both active or both silent — 2.
    """
    s_active = np.asarray(s_active, dtype=bool)
    y_active = np.asarray(y_active, dtype=bool)
    if s_active.shape != y_active.shape:
        raise ValueError(f"activity lengths differ: {s_active.shape} vs {y_active.shape}")
    labels = np.full(s_active.shape[0], DTD_DOUBLE_TALK, dtype=np.uint8)
    labels[s_active & ~y_active] = DTD_NEAR_END
    labels[y_active & ~s_active] = DTD_FAR_END
    return labels


def dtd_labels(s, y, cfg: StftConfig | None = None) -> np.ndarray:
    """Per-frame double-talk state of a (near-end, echo) pair.

    A signal is active in a frame when its peak short-time bin magnitude
    exceeds ``ACTIVITY_THRESHOLD``; see :func:`labels_from_activity` for the
    label rule.

    Parameters
    ----------
    s, y : AudioSignal or np.ndarray
        Near-end and echo signals; must have equal length.
    cfg : StftConfig, optional
        Analysis configuration (defaults to the toolkit's 128/64 setup).

    Returns
    -------
    np.ndarray
        ``uint8`` label per analysis frame.
    """
    cfg = cfg if cfg is not None else StftConfig()
    s_, y_ = _data(s), _data(y)
    if s_.shape[0] != y_.shape[0]:
        raise ValueError(f"signal lengths differ: {s_.shape[0]} vs {y_.shape[0]}")
    return labels_from_activity(frame_activity(s_, cfg), frame_activity(y_, cfg))


def measure_ser(s, y, cfg: StftConfig | None = None) -> float:
    """Signal-to-echo ratio in dB over frames where both signals are active.

    Raises ``ValueError`` when no frame has both active (the ratio is then
    undefined).
    """
    cfg = cfg if cfg is not None else StftConfig()
    s_, y_ = _data(s), _data(y)
    if s_.shape[0] != y_.shape[0]:
        raise ValueError(f"signal lengths differ: {s_.shape[0]} vs {y_.shape[0]}")
    s_peak, s_power = _frame_peaks_and_powers(s_, cfg)
    y_peak, y_power = _frame_peaks_and_powers(y_, cfg)
    both = (s_peak > ACTIVITY_THRESHOLD) & (y_peak > ACTIVITY_THRESHOLD)
    p_s, p_y = float(s_power[both].sum()), float(y_power[both].sum())
    if not np.any(both) or p_s <= 0.0 or p_y <= 0.0:
        raise ValueError("no frames with both near end and echo active")
    return 10.0 * float(np.log10(p_s / p_y))


def mix_at_ser(s, y, target_ser_db: float, cfg: StftConfig | None = None):
    """Mix near-end speech into an echo at a target signal-to-echo ratio.

    The near end is scaled so that ``10*log10(P_s / P_y)``, with both powers
    summed over frames where both signals are active, lands within 0.1 dB of
    ``target_ser_db``; the mixture is ``d = scale * s + y``. Because scaling
    changes which near-end frames count as active, the measurement is
    re-taken after each adjustment until it settles. If the mixture would
    clip, all components are rescaled together (preserving the SER) so its
    peak stays at 0.99.

    An all-zero near end is a far-end single-talk mixture: ``d = y`` (peak-
    limited the same way) and the scale is reported as 1.

    Parameters
    ----------
    s, y : AudioSignal or np.ndarray
        Near-end and echo signals of equal length.
    target_ser_db : float
        Desired ratio in dB.
    cfg : StftConfig, optional
        Analysis configuration used for activity detection.

    Returns
    -------
    (d, scale)
        The mixture (same container kind as ``s``) and the total factor
        applied to ``s`` inside it.

    Raises
    ------
    ValueError
        If the echo is silent against a non-silent near end, if no frame has
        both signals active, or if the measurement cannot settle.
    """
    cfg = cfg if cfg is not None else StftConfig()
    s_, y_ = _data(s), _data(y)
    if s_.shape[0] != y_.shape[0]:
        raise ValueError(f"signal lengths differ: {s_.shape[0]} vs {y_.shape[0]}")

    def _wrap(samples: np.ndarray):
        if isinstance(s, AudioSignal):
            return AudioSignal(samples, s.sample_rate)
        return samples

    if not np.any(s_):
        d = y_.copy()
        peak = np.max(np.abs(d)) if d.size else 0.0
        if peak > _PEAK_CEILING:
            d *= _PEAK_CEILING / peak
        return _wrap(d), 1.0

    if not np.any(y_):
        raise ValueError("echo signal is all-zero; cannot set a signal-to-echo ratio")

    s_peak, s_power = _frame_peaks_and_powers(s_, cfg)
    y_peak, y_power = _frame_peaks_and_powers(y_, cfg)
    y_active = y_peak > ACTIVITY_THRESHOLD

    scale = 1.0
    measured = None
    for _ in range(_MAX_SER_ROUNDS):
        both = (scale * s_peak > ACTIVITY_THRESHOLD) & y_active
        p_s = scale * scale * float(s_power[both].sum())
        p_y = float(y_power[both].sum())
        if not np.any(both) or p_s <= 0.0 or p_y <= 0.0:
            raise ValueError(
                "no frames with both near end and echo active; cannot measure "
                "the signal-to-echo ratio"
            )
        measured = 10.0 * np.log10(p_s / p_y)
        if abs(measured - target_ser_db) < 0.02:
            break
        scale *= 10.0 ** ((target_ser_db - measured) / 20.0)
    else:
        if measured is None or abs(measured - target_ser_db) > _SER_TOLERANCE_DB:
            raise ValueError(
                f"signal-to-echo ratio did not settle at {target_ser_db} dB "
                f"(last measurement {measured} dB)"
            )

    d = scale * s_ + y_
    peak = np.max(np.abs(d))
    if peak > _PEAK_CEILING:
        g = _PEAK_CEILING / peak
        d *= g
        scale *= g
    return _wrap(d), float(scale)
