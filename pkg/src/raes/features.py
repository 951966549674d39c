"""Network input features: stacked log-spectra of the filter output and far end.

Per frame the network sees the last 20 log-magnitude spectra of two channels
— channel 0 the adaptive-filter output, channel 1 the far-end reference —
arranged causally (current frame plus the 19 previous; no lookahead). Each
64-bin spectrum is split into two rows of 32 bins, giving a 2×40×32 tensor:
frame ``i`` of the stack (0 = oldest, 19 = current) occupies rows ``2i``
(bins 0..31) and ``2i + 1`` (bins 32..63). Before any frames arrive, the
history is filled with the log of silence, ``ln(eps)``.
"""

from __future__ import annotations

import numpy as np

LOG_EPS = 1e-7
N_CONTEXT_FRAMES = 20
N_BINS = 64
FEATURE_SHAPE = (2, 2 * N_CONTEXT_FRAMES, N_BINS // 2)

_FILL_VALUE = float(np.log(LOG_EPS))


def log_spectrum(frame: np.ndarray) -> np.ndarray:
    """Per-bin log magnitude ``ln(|X| + eps)`` with ``eps = 1e-7``."""
    return np.log(np.abs(frame) + LOG_EPS)


class FrameHistory:
    """Rolling buffer of the last 20 log-spectra for both input channels.

    Single-writer: one stream pushes frames in order; ``build_feature``
    snapshots the current contents. Missing frames at stream start read as
    the silence fill value.
    """

    def __init__(self, n_frames: int = N_CONTEXT_FRAMES, n_bins: int = N_BINS) -> None:
        self.n_frames = n_frames
        self.n_bins = n_bins
        self._data = np.full((2, n_frames, n_bins), _FILL_VALUE, dtype=np.float32)
        self.frame_index = -1

    def push(self, error_logspec: np.ndarray, farend_logspec: np.ndarray) -> None:
        """Append one frame's log-spectra (channel 0: filter output, 1: far end)."""
        if error_logspec.shape != (self.n_bins,) or farend_logspec.shape != (self.n_bins,):
            raise ValueError(
                f"expected log-spectra of shape ({self.n_bins},), got "
                f"{error_logspec.shape} and {farend_logspec.shape}"
            )
        self._data[:, :-1] = self._data[:, 1:]
        self._data[0, -1] = error_logspec
        self._data[1, -1] = farend_logspec
        self.frame_index += 1


def build_feature(history: FrameHistory) -> np.ndarray:
    """Snapshot the history as the 2×40×32 network input tensor.

    The 2×20×64 stack is reshaped so each frame's 64 bins become two
    adjacent 32-bin rows (row ``2i``: bins 0..31, row ``2i+1``: bins
    32..63), preserving frequency locality within rows.
    """
    n_rows = 2 * history.n_frames
    return history._data.reshape(2, n_rows, history.n_bins // 2).copy()
