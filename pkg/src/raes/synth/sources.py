"""Source material for the mixture generator.

Real corpora are licensed and large, so the generator also ships a
self-contained synthesizer of speech-like and music-like signals: enveloped
noise bursts with pitch harmonics and pauses for speech, sustained harmonic
chords for music. These are statistically adequate for exercising the echo
pipeline (bursty spectra, silence gaps, broadband content) and keep every
test and demo reproducible from a seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from raes.audio import DEFAULT_SAMPLE_RATE, write_wav


def list_wavs(dirs) -> list[Path]:
    """All ``.wav`` files under the given directories, sorted for determinism.

    Raises ``ValueError`` if a directory does not exist or no files are found.
    """
    if isinstance(dirs, (str, Path)):
        dirs = [dirs]
    files: list[Path] = []
    for d in dirs:
        d = Path(d)
        if not d.is_dir():
            raise ValueError(f"source directory does not exist: {d}")
        files.extend(sorted(d.glob("*.wav")))
    if not files:
        raise ValueError(f"no .wav files found under {[str(d) for d in dirs]}")
    return files


def speech_like(duration_s: float, rng: np.random.Generator,
                fs: int = DEFAULT_SAMPLE_RATE, level: float = 0.3) -> np.ndarray:
    """Speech-shaped test signal: syllable-like bursts separated by pauses.

    Each burst is smoothed noise plus a low pitch tone under a raised-cosine
    envelope; pauses are digital silence. Peak-normalized to ``level``.
    """
    n = int(round(duration_s * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        burst = int(round(fs * 0.25 * (0.5 + rng.random())))
        pause = int(round(fs * 0.2 * (0.5 + rng.random())))
        burst = min(burst, n - pos)
        if burst > 8:
            noise = rng.standard_normal(burst)
            smooth = int(1 + 7 * rng.random())
            if smooth > 1:
                noise = np.convolve(noise, np.ones(smooth) / smooth, mode="same")
            envelope = np.sin(np.pi * np.arange(burst) / burst) ** 2
            pitch = 100.0 + 300.0 * rng.random()
            tone = np.sin(2 * np.pi * pitch * np.arange(burst) / fs + rng.random() * 6.28)
            out[pos: pos + burst] = (0.7 * noise + 0.5 * tone) * envelope
        pos += burst + pause
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= level / peak
    return out


def music_like(duration_s: float, rng: np.random.Generator,
               fs: int = DEFAULT_SAMPLE_RATE, level: float = 0.3) -> np.ndarray:
    """Music-shaped test signal: sustained harmonic chords with soft onsets.

    Unlike speech it has no silent gaps, which is what makes music a harder
    far-end case for double-talk detection.
    """
    n = int(round(duration_s * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        note = min(int(round(fs * 0.4 * (0.5 + rng.random()))), n - pos)
        if note < 32:
            break
        root = 110.0 * 2.0 ** rng.integers(0, 4) * 2.0 ** (rng.integers(0, 12) / 12.0)
        t = np.arange(note) / fs
        chord = np.zeros(note)
        for ratio in (1.0, 1.5, 2.0):
            for harmonic in (1, 2, 3):
                amp = 1.0 / harmonic
                chord += amp * np.sin(2 * np.pi * root * ratio * harmonic * t + rng.random() * 6.28)
        attack = max(1, note // 16)
        env = np.ones(note)
        env[:attack] = np.linspace(0.0, 1.0, attack)
        env[-attack:] *= np.linspace(1.0, 0.3, attack)
        out[pos: pos + note] = chord * env
        pos += note
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= level / peak
    return out


def build_corpus(out_dir, n_farend: int = 8, n_nearend: int = 8, n_music: int = 2,
                 seed: int = 0, duration_s: float = 6.0,
                 fs: int = DEFAULT_SAMPLE_RATE) -> dict[str, str]:
    """Write a small synthetic source corpus and return its directory map.

    Creates ``farend/``, ``nearend/``, and ``music/`` subdirectories of
    ``out_dir`` populated with WAV files, ready to reference from a mixture
    generator config.
    """
    out_dir = Path(out_dir)
    dirs = {"farend": out_dir / "farend", "nearend": out_dir / "nearend",
            "music": out_dir / "music"}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_farend):
        write_wav(dirs["farend"] / f"farend_{i:03d}.wav", speech_like(duration_s, rng, fs), fs)
    for i in range(n_nearend):
        write_wav(dirs["nearend"] / f"nearend_{i:03d}.wav", speech_like(duration_s, rng, fs), fs)
    for i in range(n_music):
        write_wav(dirs["music"] / f"music_{i:03d}.wav", music_like(duration_s, rng, fs), fs)
    return {name: str(path) for name, path in dirs.items()}
