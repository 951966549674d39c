"""Simulated room impulse responses via the image method.

A shoebox room is mirrored recursively across its walls; every mirror image
of the source contributes an attenuated, delayed copy of the impulse. With a
uniform wall reflection coefficient the image amplitudes close over distance
``d`` and total reflection count ``r`` as ``beta**r / (4*pi*d)``. The wall
absorption is solved from the requested reverberation time with Sabine's
relation, so the generated response decays to -60 dB in roughly ``rt60``
seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from raes.audio import DEFAULT_SAMPLE_RATE, AudioSignal

SPEED_OF_SOUND = 343.0  # m/s

# Reverberation times are drawn from a fixed menu, each paired with the
# response length that comfortably contains its decay at 16 kHz.
RT60_CHOICES = (0.3, 0.4, 0.5, 0.6)
RT60_RIR_LENGTH = {0.3: 2048, 0.4: 2048, 0.5: 4096, 0.6: 4096}


@dataclass(frozen=True)
class RoomSpec:
    """A shoebox room with one source and one microphone.

    Parameters
    ----------
    dims : tuple of 3 floats
        Room edge lengths (a, b, c) in meters.
    source, mic : tuple of 3 floats
        Positions in meters; both must lie strictly inside the room and must
        not coincide.
    rt60 : float
        Target reverberation time in seconds; one of ``RT60_CHOICES``.
    rir_length : int
        Impulse-response length in samples; defaults to the pairing in
        ``RT60_RIR_LENGTH`` and must honor it when given explicitly.
    """

    dims: tuple[float, float, float]
    source: tuple[float, float, float]
    mic: tuple[float, float, float]
    rt60: float
    rir_length: int = field(default=0)

    def __post_init__(self) -> None:
        dims = tuple(float(v) for v in self.dims)
        source = tuple(float(v) for v in self.source)
        mic = tuple(float(v) for v in self.mic)
        if len(dims) != 3 or len(source) != 3 or len(mic) != 3:
            raise ValueError("dims, source, and mic must each have 3 components")
        if any(v <= 0 for v in dims):
            raise ValueError(f"room dimensions must be positive, got {dims}")
        for name, pos in (("source", source), ("mic", mic)):
            if any(not 0.0 < p < d for p, d in zip(pos, dims)):
                raise ValueError(
                    f"{name} position {pos} is not strictly inside room of size {dims}"
                )
        if source == mic:
            raise ValueError("source and mic positions must differ")
        if self.rt60 not in RT60_RIR_LENGTH:
            raise ValueError(f"rt60 must be one of {RT60_CHOICES}, got {self.rt60}")
        paired = RT60_RIR_LENGTH[self.rt60]
        length = self.rir_length if self.rir_length else paired
        if length != paired:
            raise ValueError(
                f"rir_length {length} does not match the pairing for "
                f"rt60={self.rt60} (expected {paired})"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "mic", mic)
        object.__setattr__(self, "rir_length", length)

    @property
    def volume(self) -> float:
        a, b, c = self.dims
        return a * b * c

    @property
    def surface_area(self) -> float:
        a, b, c = self.dims
        return 2.0 * (a * b + a * c + b * c)

    def sabine_absorption(self) -> float:
        """Uniform wall absorption coefficient solving Sabine's relation
        ``rt60 = 0.161 * V / (alpha * S)`` for this room."""
        return 0.161 * self.volume / (self.surface_area * self.rt60)


def _axis_images(length: float, src: float, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Mirror-image coordinates along one axis with their wall-hit counts.

    Images come in two families: ``2*n*L + src`` (an even number ``|2n|`` of
    reflections) and ``2*n*L - src`` (an odd number ``|2n - 1|``).
    """
    n = np.arange(-n_max, n_max + 1)
    coords = np.concatenate([2 * n * length + src, 2 * n * length - src])
    hits = np.concatenate([np.abs(2 * n), np.abs(2 * n - 1)])
    return coords, hits


def generate_rir(room: RoomSpec, fs: int = DEFAULT_SAMPLE_RATE,
                 absorption: float | None = None) -> np.ndarray:
    """Image-method impulse response for ``room``, truncated to its length.

    Each image at distance ``d`` with ``r`` total wall hits adds
    ``beta**r / (4*pi*d)`` at sample ``round(fs * d / c)``; images landing on
    the same sample accumulate. The direct path therefore peaks at
    ``round(fs * dist(source, mic) / c)``.

    Parameters
    ----------
    room : RoomSpec
        Geometry, reverberation target, and output length.
    fs : int
        Sample rate of the response.
    absorption : float, optional
        Override the uniform wall absorption coefficient (``0 < a <= 1``;
        1 is the anechoic limit). Defaults to the Sabine solution for the
        room's ``rt60``.

    Returns
    -------
    np.ndarray
        Float64 response of ``room.rir_length`` samples.
    """
    if absorption is None:
        absorption = room.sabine_absorption()
    if not 0.0 < absorption <= 1.0:
        raise ValueError(f"absorption must be in (0, 1], got {absorption}")
    beta = float(np.sqrt(1.0 - min(absorption, 1.0)))

    # Farthest image that can still land inside the response.
    d_max = SPEED_OF_SOUND * room.rir_length / fs + max(room.dims)
    per_axis = []
    for length, src, mic in zip(room.dims, room.source, room.mic):
        n_max = int(np.ceil(d_max / (2.0 * length))) + 1
        coords, hits = _axis_images(length, src, n_max)
        per_axis.append((coords - mic, hits))

    (dx, rx), (dy, ry), (dz, rz) = per_axis
    dist = np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2)
    hits = rx[:, None, None] + ry[None, :, None] + rz[None, None, :]
    amp = beta ** hits / (4.0 * np.pi * dist)
    idx = np.rint(fs * dist / SPEED_OF_SOUND).astype(np.int64)

    keep = (idx < room.rir_length) & (amp > 0)
    rir = np.zeros(room.rir_length)
    np.add.at(rir, idx[keep], amp[keep])
    return rir


def convolve_rir(u, rir: np.ndarray):
    """Convolve a signal with an impulse response, truncated to input length.

    Parameters
    ----------
    u : AudioSignal or np.ndarray
        Dry signal.
    rir : np.ndarray
        Impulse response taps.
    """
    rir = np.asarray(rir, dtype=np.float64)
    if rir.ndim != 1 or rir.size == 0:
        raise ValueError(f"rir must be a non-empty 1-D array, got shape {rir.shape}")
    if isinstance(u, AudioSignal):
        wet = np.convolve(u.samples, rir)[: len(u)]
        return AudioSignal(wet, u.sample_rate)
    x = np.asarray(u, dtype=np.float64)
    return np.convolve(x, rir)[: x.shape[0]]
