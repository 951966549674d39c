"""Dataset generation: parameter draws, per-record synthesis, manifests.

``synth_dataset`` turns a JSON config into a directory of mixture records.
Each record is a quadruplet of WAV files — far-end reference ``u``, mixture
``d``, scaled near end ``s``, and echo ``y`` with ``d = s + y`` — plus one
JSON-lines manifest entry holding the draw parameters and a run-length-coded
double-talk label track. Every record is seeded from ``(master seed, record
index)``, so generation is deterministic and embarrassingly parallel; the
manifest is assembled in index order at the end.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from raes.audio import DEFAULT_SAMPLE_RATE, AudioSignal, read_wav, write_wav
from raes.stft import StftConfig
from raes.synth.distortion import (
    NONLINEARITY_MODES,
    apply_delay,
    hard_clip,
    loudspeaker_nonlinearity,
)
from raes.synth.mixer import frame_activity, labels_from_activity, measure_ser, mix_at_ser
from raes.synth.rir import RT60_CHOICES, RoomSpec, convolve_rir, generate_rir
from raes.synth.sources import list_wavs

# Shoebox rooms used when the config does not supply its own.
DEFAULT_ROOM_DIMS = ((6.5, 4.1, 2.95), (4.2, 3.83, 2.75))

_PEAK_CEILING = 0.99
_ROOM_MARGIN_M = 0.5

_PARAM_RANGES = {
    "u_max": (0.75, 0.99),
    "gain": (0.15, 0.3),
    "a_pos": (0.05, 0.45),
    "a_neg": (0.1, 0.4),
    "delay_ms": (8.0, 40.0),
    "target_ser_db": (-13.0, 0.0),
}


@dataclass(frozen=True)
class SynthParams:
    """One record's distortion and mixing parameters.

    All values must lie in the generator's draw ranges; ``seed`` is the
    dataset's master seed (a record is reproduced by seeding with
    ``(seed, index)``).
    """

    u_max: float
    gain: float
    a_pos: float
    a_neg: float
    delay_ms: float
    target_ser_db: float
    clip_probability: float = 0.7
    rir_probability: float = 0.9
    nonlinearity_mode: str = "corrected"
    seed: int = 0

    def __post_init__(self) -> None:
        for name, (lo, hi) in _PARAM_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ValueError(f"{name} must be in [{lo}, {hi}], got {value}")
        for name in ("clip_probability", "rir_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.nonlinearity_mode not in NONLINEARITY_MODES:
            raise ValueError(
                f"nonlinearity_mode must be one of {NONLINEARITY_MODES}, "
                f"got {self.nonlinearity_mode!r}"
            )


@dataclass(frozen=True)
class MixtureRecord:
    """An assembled mixture: four aligned signals plus frame labels.

    Invariants: equal lengths and rates; ``d = s + y`` within one float32
    rounding step; label track length matches the analysis frame count; all
    samples within [-1, 1].
    """

    u: AudioSignal
    d: AudioSignal
    s: AudioSignal
    y: AudioSignal
    labels: np.ndarray
    params: SynthParams
    scale: float = 1.0
    clipped: bool = False
    reverberant: bool = False

    def __post_init__(self) -> None:
        signals = {"u": self.u, "d": self.d, "s": self.s, "y": self.y}
        n, rate = len(self.d), self.d.sample_rate
        for name, sig in signals.items():
            if len(sig) != n or sig.sample_rate != rate:
                raise ValueError(f"signal {name} does not match d in length or rate")
            if np.max(np.abs(sig.samples), initial=0.0) > 1.0:
                raise ValueError(f"signal {name} exceeds [-1, 1]")
        err = np.max(np.abs(self.d.samples - (self.s.samples + self.y.samples)), initial=0.0)
        if err > 1e-7:
            raise ValueError(f"d deviates from s + y by {err:.3e} (> 1e-7)")
        cfg = StftConfig()
        expected = (n - cfg.window_size) // cfg.hop + 1 if n >= cfg.window_size else 0
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.shape != (expected,):
            raise ValueError(
                f"label track has {labels.shape[0]} entries for {expected} frames"
            )
        object.__setattr__(self, "labels", labels)


def draw_params(rng: np.random.Generator, seed: int = 0,
                ser_range_db: tuple[float, float] = (-13.0, 0.0),
                nonlinearity_mode: str = "corrected",
                clip_probability: float = 0.7,
                rir_probability: float = 0.9) -> SynthParams:
    """Draw one record's parameters uniformly from the generator ranges."""
    lo, hi = ser_range_db
    return SynthParams(
        u_max=float(rng.uniform(*_PARAM_RANGES["u_max"])),
        gain=float(rng.uniform(*_PARAM_RANGES["gain"])),
        a_pos=float(rng.uniform(*_PARAM_RANGES["a_pos"])),
        a_neg=float(rng.uniform(*_PARAM_RANGES["a_neg"])),
        delay_ms=float(rng.uniform(*_PARAM_RANGES["delay_ms"])),
        target_ser_db=float(rng.uniform(lo, hi)),
        clip_probability=clip_probability,
        rir_probability=rir_probability,
        nonlinearity_mode=nonlinearity_mode,
        seed=seed,
    )


def draw_room(rng: np.random.Generator,
              room_dims=DEFAULT_ROOM_DIMS) -> RoomSpec:
    """Draw a room geometry: dimensions, reverberation time, positions.

    Source and mic are placed uniformly at least 0.5 m (or a quarter of the
    smallest edge, whichever is less) from every wall.
    """
    dims = tuple(float(v) for v in room_dims[int(rng.integers(len(room_dims)))])
    rt60 = RT60_CHOICES[int(rng.integers(len(RT60_CHOICES)))]
    margins = [min(_ROOM_MARGIN_M, d / 4.0) for d in dims]
    while True:
        source = tuple(float(rng.uniform(m, d - m)) for d, m in zip(dims, margins))
        mic = tuple(float(rng.uniform(m, d - m)) for d, m in zip(dims, margins))
        if source != mic:
            return RoomSpec(dims, source, mic, rt60)


def _fit_length(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Crop (long sources) or circularly tile (short ones) to ``n`` samples,
    starting at a random offset."""
    if x.size == 0:
        raise ValueError("source signal is empty")
    if x.size >= n:
        start = int(rng.integers(0, x.size - n + 1))
        return x[start: start + n].copy()
    start = int(rng.integers(0, x.size))
    reps = -(-(start + n) // x.size)  # ceil
    return np.tile(x, reps)[start: start + n].copy()


def synthesize_record(farend: np.ndarray, nearend: np.ndarray | None,
                      params: SynthParams, *, clipped: bool = True,
                      rir: np.ndarray | None = None,
                      fs: int = DEFAULT_SAMPLE_RATE,
                      cfg: StftConfig | None = None) -> MixtureRecord:
    """Assemble one mixture from prepared source signals.

    The far end is distorted (optional hard clip, sigmoid nonlinearity,
    playback delay), optionally convolved with ``rir`` to form the echo, and
    mixed with the near end at ``params.target_ser_db``. A ``None`` near end
    produces a far-end single-talk record (``d = y``). All emitted signals
    are jointly peak-limited to 0.99 and quantized to float32 so the record
    round-trips bit-exactly through WAV files.
    """
    cfg = cfg if cfg is not None else StftConfig()
    farend = np.asarray(farend, dtype=np.float64)
    peak = np.max(np.abs(farend), initial=0.0)
    if peak > _PEAK_CEILING:
        farend = farend * (_PEAK_CEILING / peak)

    x = hard_clip(farend, params.u_max) if clipped else farend
    x = loudspeaker_nonlinearity(x, params.gain, params.a_pos, params.a_neg,
                                 params.nonlinearity_mode)
    x = apply_delay(x, params.delay_ms, fs)
    y = convolve_rir(x, rir) if rir is not None else x

    if nearend is None:
        d, scale = mix_at_ser(np.zeros_like(y), y, params.target_ser_db, cfg)
        s_out, y_out, d_out = np.zeros_like(d), d, d
    else:
        nearend = np.asarray(nearend, dtype=np.float64)
        d, scale = mix_at_ser(nearend, y, params.target_ser_db, cfg)
        s_out = scale * nearend
        y_out = d - s_out
        d_out = s_out + y_out
        peak = max(np.max(np.abs(s_out)), np.max(np.abs(y_out)), np.max(np.abs(d_out)))
        if peak > _PEAK_CEILING:
            g = _PEAK_CEILING / peak
            s_out, y_out = s_out * g, y_out * g
            scale *= g
            d_out = s_out + y_out

    # Quantize to the WAV sample format and rebuild the sum in that format,
    # so files satisfy d = s + y to within one float32 rounding step.
    u32 = farend.astype(np.float32)
    s32 = s_out.astype(np.float32)
    y32 = y_out.astype(np.float32)
    d32 = s32 + y32

    labels = labels_from_activity(frame_activity(s32, cfg), frame_activity(y32, cfg))
    return MixtureRecord(
        u=AudioSignal(u32, fs), d=AudioSignal(d32, fs),
        s=AudioSignal(s32, fs), y=AudioSignal(y32, fs),
        labels=labels, params=params, scale=float(scale),
        clipped=clipped, reverberant=rir is not None,
    )


def run_length_encode(values) -> list[list[int]]:
    """Run-length encode an integer sequence as ``[[value, run], ...]``."""
    values = np.asarray(values)
    if values.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [values.size]])
    return [[int(values[a]), int(b - a)] for a, b in zip(starts, ends)]


def run_length_decode(pairs, dtype=np.uint8) -> np.ndarray:
    """Inverse of :func:`run_length_encode`."""
    if not pairs:
        return np.zeros(0, dtype=dtype)
    return np.concatenate([np.full(run, value, dtype=dtype) for value, run in pairs])


_CONFIG_DEFAULTS = {
    "music_dirs": [],
    "music_ratio": 0.0,
    "nearend_silent_ratio": 0.5,
    "ser_range_db": [-13.0, 0.0],
    "ser_choices_db": None,
    "duration_s": 4.0,
    "sample_rate": DEFAULT_SAMPLE_RATE,
    "nonlinearity_mode": "corrected",
    "clip_probability": 0.7,
    "rir_probability": 0.9,
    "rir": {"rooms": [list(d) for d in DEFAULT_ROOM_DIMS]},
}
_CONFIG_REQUIRED = ("farend_dirs", "nearend_dirs", "count", "seed", "output_dir")


def _load_config(config) -> dict:
    """Resolve a config mapping or JSON file path; validate all fields."""
    if isinstance(config, (str, Path)):
        path = Path(config)
        if not path.is_file():
            raise ValueError(f"config file does not exist: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"config must be a mapping or a JSON file path, got {type(config)}")

    known = set(_CONFIG_DEFAULTS) | set(_CONFIG_REQUIRED)
    unknown = sorted(set(config) - known)
    if unknown:
        raise ValueError(f"unknown config fields: {unknown}")
    missing = [key for key in _CONFIG_REQUIRED if key not in config]
    if missing:
        raise ValueError(f"config is missing required fields: {missing}")

    cfg = dict(_CONFIG_DEFAULTS)
    cfg.update(config)

    if not isinstance(cfg["count"], int) or cfg["count"] < 0:
        raise ValueError(f"count must be a non-negative integer, got {cfg['count']}")
    if not isinstance(cfg["seed"], int):
        raise ValueError(f"seed must be an integer, got {cfg['seed']}")
    for name in ("music_ratio", "nearend_silent_ratio", "clip_probability", "rir_probability"):
        if not 0.0 <= cfg[name] <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {cfg[name]}")
    if cfg["duration_s"] <= 0:
        raise ValueError(f"duration_s must be positive, got {cfg['duration_s']}")
    lo, hi = cfg["ser_range_db"]
    bounds = _PARAM_RANGES["target_ser_db"]
    if not bounds[0] <= lo <= hi <= bounds[1]:
        raise ValueError(
            f"ser_range_db must satisfy {bounds[0]} <= lo <= hi <= {bounds[1]}, "
            f"got [{lo}, {hi}]"
        )
    if cfg["ser_choices_db"] is not None:
        choices = cfg["ser_choices_db"]
        if not choices or any(not bounds[0] <= v <= bounds[1] for v in choices):
            raise ValueError(
                f"ser_choices_db must be a non-empty list of values within "
                f"[{bounds[0]}, {bounds[1]}], got {choices}"
            )
    if cfg["music_ratio"] > 0 and not cfg["music_dirs"]:
        raise ValueError("music_ratio > 0 requires music_dirs")
    rir = cfg["rir"]
    if not isinstance(rir, dict) or len(rir) != 1 or next(iter(rir)) not in ("rooms", "wav_dir"):
        raise ValueError('rir must be {"rooms": [[a, b, c], ...]} or {"wav_dir": path}')
    if "rooms" in rir:
        rooms = rir["rooms"]
        if not rooms or any(len(r) != 3 or any(v <= 0 for v in r) for r in rooms):
            raise ValueError("rir.rooms must be a non-empty list of positive [a, b, c] triples")
    return cfg


def _spread_flags(count: int, ratio: float) -> list[bool]:
    """Evenly distribute ``round(count * ratio)`` True flags over ``count``
    slots (Bresenham spacing), so small datasets still hit the ratio exactly."""
    return [math.floor((i + 1) * ratio + 1e-9) - math.floor(i * ratio + 1e-9) == 1
            for i in range(count)]


def _max_workers(count: int) -> int:
    env = os.environ.get("RAES_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ValueError(f"RAES_THREADS must be an integer, got {env!r}") from exc
        return max(1, min(cap, count or 1))
    return 1


def synth_dataset(config, workers: int | None = None) -> Path:
    """Generate a mixture dataset from a config mapping or JSON file.

    Writes ``record_<index>/{u,d,s,y}.wav`` quadruplets under the config's
    ``output_dir`` plus a ``manifest.jsonl`` with one entry per record, and
    returns the manifest path. Fixing the seed fixes every byte of the
    manifest and every sample of the WAVs.

    ``workers`` overrides the parallelism (default: the ``RAES_THREADS``
    environment variable, else sequential). Records are independent, so the
    output is identical at any worker count.
    """
    cfg = _load_config(config)
    fs = cfg["sample_rate"]
    stft_cfg = StftConfig()
    n_samples = int(round(cfg["duration_s"] * fs))

    farend_files = list_wavs(cfg["farend_dirs"])
    nearend_files = list_wavs(cfg["nearend_dirs"])
    music_files = list_wavs(cfg["music_dirs"]) if cfg["music_ratio"] > 0 else []
    rir_files = list_wavs(cfg["rir"]["wav_dir"]) if "wav_dir" in cfg["rir"] else None
    rooms = cfg["rir"].get("rooms")

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    count = cfg["count"]
    silent_flags = _spread_flags(count, cfg["nearend_silent_ratio"])
    music_flags = _spread_flags(count, cfg["music_ratio"])

    def build(index: int) -> dict:
        rng = np.random.default_rng([cfg["seed"], index])
        params = draw_params(
            rng, seed=cfg["seed"], ser_range_db=tuple(cfg["ser_range_db"]),
            nonlinearity_mode=cfg["nonlinearity_mode"],
            clip_probability=cfg["clip_probability"],
            rir_probability=cfg["rir_probability"],
        )
        choices = cfg["ser_choices_db"]
        if choices is not None:
            target = float(choices[int(rng.integers(len(choices)))])
            params = replace(params, target_ser_db=target)
        clipped = bool(rng.random() < params.clip_probability)
        reverberant = bool(rng.random() < params.rir_probability)

        source_files = music_files if music_flags[index] else farend_files
        far_file = source_files[int(rng.integers(len(source_files)))]
        farend = _fit_length(read_wav(far_file, fs).samples, n_samples, rng)

        near_file = None
        nearend = None
        if not silent_flags[index]:
            near_file = nearend_files[int(rng.integers(len(nearend_files)))]
            nearend = _fit_length(read_wav(near_file, fs).samples, n_samples, rng)

        room = None
        rir_file = None
        rir = None
        if reverberant:
            if rir_files is not None:
                rir_file = rir_files[int(rng.integers(len(rir_files)))]
                rir = read_wav(rir_file, fs).samples
            else:
                room = draw_room(rng, rooms)
                rir = generate_rir(room, fs)
            # Echo paths work at the level convention of measured-response
            # corpora: unit peak. The raw image-method response carries the
            # physical 1/(4*pi*d) spreading loss, which would leave synthetic
            # echoes tens of dB below the activity threshold.
            rir = rir / np.max(np.abs(rir))

        record = synthesize_record(farend, nearend, params, clipped=clipped,
                                   rir=rir, fs=fs, cfg=stft_cfg)

        rec_dir = out_dir / f"record_{index:05d}"
        rec_dir.mkdir(exist_ok=True)
        for name, sig in (("u", record.u), ("d", record.d), ("s", record.s), ("y", record.y)):
            write_wav(rec_dir / f"{name}.wav", sig)

        s_active = frame_activity(record.s.samples, stft_cfg)
        y_active = frame_activity(record.y.samples, stft_cfg)
        silence = (~s_active) & (~y_active)
        try:
            measured = round(measure_ser(record.s.samples, record.y.samples, stft_cfg), 4)
        except ValueError:
            measured = None

        return {
            "index": index,
            "dir": rec_dir.name,
            "files": {name: f"{rec_dir.name}/{name}.wav" for name in ("u", "d", "s", "y")},
            "params": asdict(params),
            "clipped": clipped,
            "reverberant": reverberant,
            "nearend_silent": silent_flags[index],
            "farend_kind": "music" if music_flags[index] else "speech",
            "farend_source": far_file.name,
            "nearend_source": near_file.name if near_file else None,
            "room": ({"dims": list(room.dims), "source": list(room.source),
                      "mic": list(room.mic), "rt60": room.rt60,
                      "rir_length": room.rir_length} if room else None),
            "rir_file": rir_file.name if rir_file else None,
            "scale": record.scale,
            "measured_ser_db": measured,
            "n_frames": int(record.labels.shape[0]),
            "labels_rle": run_length_encode(record.labels),
            "silence_rle": run_length_encode(silence.astype(np.uint8)),
            "duration_s": cfg["duration_s"],
            "sample_rate": fs,
        }

    n_workers = workers if workers is not None else _max_workers(count)
    if n_workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            entries = list(pool.map(build, range(count)))
    else:
        entries = [build(i) for i in range(count)]

    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(path) -> list[dict]:
    """Read a ``manifest.jsonl`` back into a list of record entries."""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"manifest does not exist: {path}")
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid manifest line") from exc
    return entries


def label_histogram(entries: list[dict]) -> dict[str, int]:
    """Total frame count per double-talk label across manifest entries."""
    histogram = {"0": 0, "1": 0, "2": 0}
    for entry in entries:
        for value, run in entry["labels_rle"]:
            histogram[str(value)] += run
    return histogram
