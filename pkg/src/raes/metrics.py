"""Evaluation metrics: echo suppression, intelligibility, and runtime cost.

Echo return loss enhancement (ERLE) measures how much microphone energy the
canceller removed and is meaningful where the far end talks alone;
short-time objective intelligibility (STOI) measures how well the near-end
talker survives processing and is meaningful where both talk at once. Both
therefore accept the per-frame double-talk label track and evaluate only
their own regime's hop-aligned sample spans. The real-time factor times the
actual pipeline against the audio clock on a single pinned core, and the
FLOPs counter prices the network analytically from its layer table.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly
from threadpoolctl import threadpool_limits

from raes.audio import DEFAULT_SAMPLE_RATE, AudioSignal, read_wav
from raes.nn.arch import ARCHITECTURE, Architecture
from raes.stft import StftConfig
from raes.synth.dataset import load_manifest, run_length_decode
from raes.synth.mixer import DTD_DOUBLE_TALK, DTD_FAR_END

ERLE_CAP_DB = 80.0

STOI_SAMPLE_RATE = 10_000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ_HZ = 150.0
STOI_SEGMENT_FRAMES = 30
STOI_CLIP_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

MIN_RT_AUDIO_SECONDS = 10.0
MIN_RT_RUNS = 3

_EPS = np.finfo(np.float64).eps


def _samples_and_rate(signal, sample_rate: int | None = None) -> tuple[np.ndarray, int]:
    if isinstance(signal, AudioSignal):
        return signal.samples, signal.sample_rate
    samples = np.asarray(signal, dtype=np.float64)
    return samples, int(sample_rate) if sample_rate is not None else DEFAULT_SAMPLE_RATE


def _sample_selection(n_samples: int, frame_mask, keep_label: int,
                      cfg: StftConfig | None) -> np.ndarray:
    """Boolean sample mask covering the hop span of every selected frame.

    ``frame_mask`` is either the per-frame double-talk label track (frames
    equal to ``keep_label`` are selected) or a boolean per-frame mask
    (``True`` frames are selected). Frame ``l`` owns samples
    ``[l*hop, (l+1)*hop)``.
    """
    cfg = cfg if cfg is not None else StftConfig()
    labels = np.asarray(frame_mask)
    expected = (n_samples - cfg.window_size) // cfg.hop + 1
    if labels.ndim != 1 or labels.shape[0] != expected:
        raise ValueError(
            f"frame mask has {labels.shape} entries, expected ({expected},) "
            f"for {n_samples} samples"
        )
    keep = labels if labels.dtype == np.bool_ else labels == keep_label
    mask = np.zeros(n_samples, dtype=bool)
    mask[: keep.shape[0] * cfg.hop] = np.repeat(keep, cfg.hop)
    return mask


def erle(mic, residual, frame_mask=None, cfg: StftConfig | None = None) -> float:
    """Echo return loss enhancement in dB:
    ``10·log10(Σ d²(n) / Σ e²(n))`` over the selected samples.

    ``frame_mask`` selects the far-end single-talk frames (label 1) whose
    hop spans the energies are summed over; ``None`` evaluates the whole
    signal. The result is capped at +80 dB when the residual energy is
    exactly zero (digital silence).
    """
    d, _ = _samples_and_rate(mic)
    e, _ = _samples_and_rate(residual)
    if d.shape != e.shape:
        raise ValueError(f"signal lengths differ: {d.shape[0]} vs {e.shape[0]}")
    if frame_mask is not None:
        mask = _sample_selection(d.shape[0], frame_mask, DTD_FAR_END, cfg)
        d, e = d[mask], e[mask]
    mic_energy = float(np.sum(d * d))
    residual_energy = float(np.sum(e * e))
    if mic_energy == 0.0:
        raise ValueError("no reference energy in the selected frames")
    if residual_energy == 0.0:
        return ERLE_CAP_DB
    return float(10.0 * np.log10(mic_energy / residual_energy))


def _stoi_window(frame: int) -> np.ndarray:
    # Endpoint-free Hann, matching the published intelligibility algorithm.
    return np.hanning(frame + 2)[1:-1]


def _remove_silent_frames(clean: np.ndarray, processed: np.ndarray,
                          dyn_range_db: float = STOI_DYN_RANGE_DB,
                          frame: int = STOI_FRAME,
                          hop: int = STOI_HOP) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose clean-signal energy sits more than ``dyn_range_db``
    below the loudest frame, and overlap-add the survivors back into a pair
    of dense signals. The mask comes from the clean signal alone so both
    signals keep identical framing."""
    window = _stoi_window(frame)
    starts = np.arange(0, clean.shape[0] - frame, hop)
    norms = np.array([np.linalg.norm(clean[i:i + frame] * window) for i in starts])
    if not np.any(norms > 0.0):
        raise ValueError("clean signal is silent: no frames survive energy masking")
    with np.errstate(divide="ignore"):
        level_db = 20.0 * np.log10(norms / np.sqrt(frame))
    kept = np.flatnonzero(level_db - np.max(level_db) + dyn_range_db > 0.0)
    out_len = (kept.size - 1) * hop + frame
    clean_out = np.zeros(out_len)
    processed_out = np.zeros(out_len)
    for rank, idx in enumerate(kept):
        src = slice(starts[idx], starts[idx] + frame)
        dst = slice(rank * hop, rank * hop + frame)
        clean_out[dst] += clean[src] * window
        processed_out[dst] += processed[src] * window
    return clean_out, processed_out


def _third_octave_matrix(fs: int = STOI_SAMPLE_RATE, nfft: int = STOI_FFT,
                         n_bands: int = STOI_BANDS,
                         min_freq: float = STOI_MIN_FREQ_HZ) -> np.ndarray:
    """Binary (band × bin) matrix grouping FFT bins into one-third-octave
    bands with centers ``min_freq · 2^(k/3)``."""
    freqs = np.linspace(0.0, fs / 2.0, nfft // 2 + 1)
    centers = min_freq * 2.0 ** (np.arange(n_bands) / 3.0)
    low = centers / 2.0 ** (1.0 / 6.0)
    high = centers * 2.0 ** (1.0 / 6.0)
    matrix = np.zeros((n_bands, freqs.shape[0]))
    for band in range(n_bands):
        lo = int(np.argmin(np.square(freqs - low[band])))
        hi = int(np.argmin(np.square(freqs - high[band])))
        matrix[band, lo:hi] = 1.0
    return matrix


def _band_envelopes(x: np.ndarray, band_matrix: np.ndarray,
                    frame: int = STOI_FRAME, hop: int = STOI_HOP,
                    nfft: int = STOI_FFT) -> np.ndarray:
    """One-third-octave magnitude envelopes, one column per analysis frame."""
    window = _stoi_window(frame)
    starts = np.arange(0, x.shape[0] - frame, hop)
    segments = np.stack([x[i:i + frame] * window for i in starts])
    spectra = np.fft.rfft(segments, n=nfft, axis=1)
    power = spectra.real ** 2 + spectra.imag ** 2
    return np.sqrt(band_matrix @ power.T)


def stoi(clean, processed, frame_mask=None, cfg: StftConfig | None = None,
         sample_rate: int | None = None) -> float:
    """Short-time objective intelligibility of ``processed`` against
    ``clean``, in [0, 1].

    Follows the published algorithm: resample to 10 kHz, drop frames more
    than 40 dB below the loudest clean frame, form one-third-octave band
    envelopes (256-sample Hann frames, hop 128, 512-point FFT, 15 bands
    from 150 Hz), and average the normalized clipped correlation of 30-frame
    segments over all bands and segments. ``frame_mask`` restricts the
    evaluation to the double-talk frames (label 2), whose hop spans are
    concatenated before analysis.
    """
    x, fs_x = _samples_and_rate(clean, sample_rate)
    y, fs_y = _samples_and_rate(processed, sample_rate)
    if x.shape != y.shape:
        raise ValueError(f"signal lengths differ: {x.shape[0]} vs {y.shape[0]}")
    if fs_x != fs_y:
        raise ValueError(f"sample rates differ: {fs_x} vs {fs_y}")
    if frame_mask is not None:
        mask = _sample_selection(x.shape[0], frame_mask, DTD_DOUBLE_TALK, cfg)
        x, y = x[mask], y[mask]
    if fs_x != STOI_SAMPLE_RATE:
        ratio = Fraction(STOI_SAMPLE_RATE, fs_x)
        x = resample_poly(x, ratio.numerator, ratio.denominator)
        y = resample_poly(y, ratio.numerator, ratio.denominator)
    if x.shape[0] <= STOI_FRAME:
        raise ValueError(
            f"selected segment is shorter than one analysis window "
            f"({x.shape[0]} samples at {STOI_SAMPLE_RATE} Hz, need > {STOI_FRAME})"
        )
    x, y = _remove_silent_frames(x, y)
    n_frames = max(0, -(-(x.shape[0] - STOI_FRAME) // STOI_HOP))
    if n_frames < STOI_SEGMENT_FRAMES:
        raise ValueError(
            f"selected segment has {n_frames} analysis frames after energy "
            f"masking, need at least {STOI_SEGMENT_FRAMES} for one segment"
        )

    band_matrix = _third_octave_matrix()
    clean_env = _band_envelopes(x, band_matrix)
    proc_env = _band_envelopes(y, band_matrix)

    clip_gain = 1.0 + 10.0 ** (-STOI_CLIP_DB / 20.0)
    total = 0.0
    n_segments = n_frames - STOI_SEGMENT_FRAMES + 1
    for end in range(STOI_SEGMENT_FRAMES, n_frames + 1):
        x_seg = clean_env[:, end - STOI_SEGMENT_FRAMES:end]
        y_seg = proc_env[:, end - STOI_SEGMENT_FRAMES:end]
        alpha = (np.linalg.norm(x_seg, axis=1, keepdims=True)
                 / (np.linalg.norm(y_seg, axis=1, keepdims=True) + _EPS))
        y_clipped = np.minimum(y_seg * alpha, x_seg * clip_gain)
        x_centered = x_seg - x_seg.mean(axis=1, keepdims=True)
        y_centered = y_clipped - y_clipped.mean(axis=1, keepdims=True)
        denom = (np.linalg.norm(x_centered, axis=1)
                 * np.linalg.norm(y_centered, axis=1) + _EPS)
        total += float(np.sum(np.sum(x_centered * y_centered, axis=1) / denom))
    return total / (STOI_BANDS * n_segments)


def rt_factor(process, audio, runs: int = MIN_RT_RUNS, warmup: int = 1) -> float:
    """Real-time factor of ``process`` on ``audio``: median wall-clock
    processing time over ``runs`` timed runs (after ``warmup`` untimed
    ones), divided by the audio duration. BLAS and numba thread pools are
    pinned to one thread for the measurement."""
    samples, fs = _samples_and_rate(audio)
    duration = samples.shape[0] / fs
    if duration < MIN_RT_AUDIO_SECONDS:
        raise ValueError(
            f"audio must be at least {MIN_RT_AUDIO_SECONDS:.0f} s for a stable "
            f"measurement, got {duration:.2f} s"
        )
    if runs < MIN_RT_RUNS:
        raise ValueError(f"need at least {MIN_RT_RUNS} timed runs, got {runs}")

    import numba

    previous_threads = numba.get_num_threads()
    times = []
    try:
        numba.set_num_threads(1)
        with threadpool_limits(limits=1):
            for _ in range(warmup):
                process(audio)
            for _ in range(runs):
                start = time.perf_counter()
                process(audio)
                times.append(time.perf_counter() - start)
    finally:
        numba.set_num_threads(previous_threads)
    return float(np.median(times) / duration)


def count_flops(architecture: Architecture = ARCHITECTURE) -> int:
    """Analytic cost of one forward pass, in FLOPs: 2·MACs for conv,
    depthwise, and fully connected layers; one op per element for
    activations; elementwise/pool layers at their arithmetic count."""
    return sum(layer.flops() for layer in architecture.layers)


def mflops_per_frame(architecture: Architecture = ARCHITECTURE) -> float:
    """:func:`count_flops` scaled to MFLOPs."""
    return count_flops(architecture) / 1e6


@dataclass(frozen=True)
class EvalReport:
    """One evaluation row: suppression, intelligibility, and runtime cost.

    Metrics that were not (or could not be) computed are ``None`` — e.g.
    STOI on a record with no double-talk frames. The frame counts record
    how many far-end single-talk and double-talk frames the respective
    metrics were evaluated over.
    """

    erle_db: float | None = None
    stoi: float | None = None
    rt_factor: float | None = None
    mflops_per_frame: float | None = None
    farend_single_frames: int = 0
    double_talk_frames: int = 0

    def __post_init__(self) -> None:
        for name in ("erle_db", "stoi", "rt_factor", "mflops_per_frame"):
            value = getattr(self, name)
            if value is not None and not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.stoi is not None and not -1e-6 <= self.stoi <= 1.0 + 1e-6:
            raise ValueError(f"stoi must be within [0, 1], got {self.stoi}")
        if self.rt_factor is not None and self.rt_factor <= 0.0:
            raise ValueError(f"rt_factor must be positive, got {self.rt_factor}")
        if self.mflops_per_frame is not None and self.mflops_per_frame <= 0.0:
            raise ValueError(f"mflops_per_frame must be positive, got {self.mflops_per_frame}")
        if self.farend_single_frames < 0 or self.double_talk_frames < 0:
            raise ValueError("frame counts must be non-negative")

    def to_dict(self) -> dict:
        """JSON-ready mapping of every field."""
        return {f.name: getattr(self, f.name) for f in fields(self)}


SER_BUCKETS_DB = (0.0, -5.0, -10.0)


def nearest_ser_bucket(ser_db: float) -> int:
    """Snap a signal-to-echo ratio to the nearest reporting bucket."""
    return int(min(SER_BUCKETS_DB, key=lambda bucket: abs(ser_db - bucket)))


def _mean_or_none(values: list) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def evaluate_dataset(manifest_path, processed_dir,
                     cfg: StftConfig | None = None) -> dict:
    """Score a directory of processed records against their manifest.

    For every manifest entry the processed output is expected at
    ``<processed_dir>/<record dir>.wav``; records without one are listed
    under ``missing`` and skipped, and the aggregate is produced from the
    rest. Per-record ERLE/STOI use the manifest's stored label track;
    aggregates are reported overall and grouped by the record's target
    signal-to-echo ratio snapped to the nearest of 0, −5, and −10 dB.
    """
    manifest_path = Path(manifest_path)
    processed_dir = Path(processed_dir)
    base = manifest_path.parent
    records = []
    missing = []
    for entry in load_manifest(manifest_path):
        processed_path = processed_dir / f"{entry['dir']}.wav"
        if not processed_path.is_file():
            missing.append(entry["dir"])
            continue
        rate = entry["sample_rate"]
        mic = read_wav(base / entry["files"]["d"], rate)
        clean = read_wav(base / entry["files"]["s"], rate)
        processed = read_wav(processed_path, rate)
        if len(processed) != len(mic):
            raise ValueError(
                f"{processed_path}: length {len(processed)} does not match "
                f"record {entry['dir']} ({len(mic)} samples)"
            )
        labels = run_length_decode(entry["labels_rle"])
        report = evaluate_record(mic, processed, clean, labels, cfg)
        records.append({
            "index": entry["index"],
            "dir": entry["dir"],
            "ser_bucket_db": nearest_ser_bucket(entry["params"]["target_ser_db"]),
            "nearend_silent": entry["nearend_silent"],
            **report.to_dict(),
        })

    buckets = {}
    for bucket in SER_BUCKETS_DB:
        rows = [r for r in records if r["ser_bucket_db"] == int(bucket)]
        buckets[str(int(bucket))] = {
            "count": len(rows),
            "mean_erle_db": _mean_or_none([r["erle_db"] for r in rows]),
            "mean_stoi": _mean_or_none([r["stoi"] for r in rows]),
        }
    return {
        "records": records,
        "missing": missing,
        "buckets": buckets,
        "overall": {
            "count": len(records),
            "mean_erle_db": _mean_or_none([r["erle_db"] for r in records]),
            "mean_stoi": _mean_or_none([r["stoi"] for r in records]),
        },
        "mflops_per_frame": mflops_per_frame(),
    }


def evaluate_record(mic, processed, clean, labels,
                    cfg: StftConfig | None = None) -> EvalReport:
    """ERLE and STOI for one processed record against its ground truth.

    ERLE compares the residual against the microphone over far-end
    single-talk frames; STOI compares the processed output against the
    clean near-end over double-talk frames. A metric whose regime is absent
    from ``labels`` (or whose selection carries no usable energy) comes
    back ``None`` rather than failing the record.
    """
    labels = np.asarray(labels)
    report_erle: float | None
    report_stoi: float | None
    try:
        report_erle = erle(mic, processed, labels, cfg)
    except ValueError:
        report_erle = None
    try:
        report_stoi = stoi(clean, processed, labels, cfg)
    except ValueError:
        report_stoi = None
    return EvalReport(
        erle_db=report_erle,
        stoi=report_stoi,
        farend_single_frames=int(np.sum(labels == DTD_FAR_END)),
        double_talk_frames=int(np.sum(labels == DTD_DOUBLE_TALK)),
    )
