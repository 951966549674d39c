"""Subband NLMS adaptive linear echo canceller.

Each retained frequency bin carries an independent multi-tap complex filter
over the far-end spectral history. Per frame and bin the filter predicts the
linear echo component of the microphone spectrum; the prediction error is the
adaptive-filter output handed to the suppression network. The normalized
update divides by the per-bin history energy, and adaptation freezes while
the far-end frame is silent so the taps cannot drift on noise alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TAPS_PER_BIN = 16
DEFAULT_STEP_SIZE = 0.5
DEFAULT_REGULARIZATION = 1e-6
SILENCE_THRESHOLD = 1e-8


@dataclass
class NlmsState:
    """Adaptive filter state: per-bin tap vectors and far-end history.

    ``taps[t, k]`` weights the far-end spectrum ``t`` frames in the past at
    bin ``k``; ``history[0]`` is the newest far-end frame. The state is
    single-stream: use one instance per audio stream.
    """

    taps: np.ndarray
    history: np.ndarray
    step_size: float = DEFAULT_STEP_SIZE
    regularization: float = DEFAULT_REGULARIZATION
    silence_threshold: float = SILENCE_THRESHOLD
    frame_index: int = field(default=-1)

    @classmethod
    def create(cls, taps_per_bin: int = DEFAULT_TAPS_PER_BIN, n_bins: int = 64,
               step_size: float = DEFAULT_STEP_SIZE,
               regularization: float = DEFAULT_REGULARIZATION) -> "NlmsState":
        """Fresh state with zero taps and zero history."""
        if not 0.0 < step_size <= 1.0:
            raise ValueError(f"step_size must be in (0, 1], got {step_size}")
        if regularization <= 0.0:
            raise ValueError(f"regularization must be positive, got {regularization}")
        return cls(
            taps=np.zeros((taps_per_bin, n_bins), dtype=np.complex128),
            history=np.zeros((taps_per_bin, n_bins), dtype=np.complex128),
            step_size=step_size,
            regularization=regularization,
        )


def nlms_step(mic_frame: np.ndarray, farend_frame: np.ndarray, state: NlmsState,
              adapt: bool = True) -> tuple[np.ndarray, np.ndarray, NlmsState]:
    """Advance the adaptive filter by one frame.

    Pushes the far-end frame into the history, predicts the echo spectrum as
    the per-bin inner product of taps and history, and subtracts it from the
    microphone spectrum. The taps are then updated by the normalized
    gradient step unless ``adapt`` is false or the far-end frame is below
    the silence threshold.

    Parameters
    ----------
    mic_frame, farend_frame : np.ndarray
        Complex spectra (64 bins) of the microphone and far-end signals.
    state : NlmsState
        Filter state; updated in place and returned.
    adapt : bool
        Set false to freeze adaptation for this frame.

    Returns
    -------
    (error_frame, echo_estimate_frame, state)
        ``error_frame = mic_frame - echo_estimate_frame`` and the updated
        state.
    """
    hist = state.history
    hist[1:] = hist[:-1]
    hist[0] = farend_frame

    echo_estimate = np.sum(state.taps * hist, axis=0)
    error = mic_frame - echo_estimate

    farend_energy = float(np.sum(farend_frame.real ** 2 + farend_frame.imag ** 2))
    if adapt and farend_energy >= state.silence_threshold:
        norm = np.sum(hist.real ** 2 + hist.imag ** 2, axis=0)
        state.taps += state.step_size * np.conj(hist) * error / (norm + state.regularization)

    state.frame_index += 1
    return error, echo_estimate, state
