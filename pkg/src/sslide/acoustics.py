"""Room acoustics: image-source RIRs and reverberant microphone-array signals.

Geometry conventions used throughout the package:

* A :class:`MicArray` is a uniform linear array.  Element ``i`` sits at
  ``center + (i - (K - 1) / 2) * spacing * orientation``.
* The local bearing ``theta`` of a point is measured from the array's
  broadside, which is ``orientation`` rotated by +90 degrees in the x-y
  plane.  Positive ``theta`` leans towards ``-orientation``, so that element
  ``i`` receives a plane wave from ``theta`` with an extra delay of
  ``i * spacing * sin(theta) / c`` relative to element 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

SABINE_CONSTANT = 0.161
FRACTIONAL_DELAY_TAPS = 8


@dataclass(frozen=True)
class MicArray:
    center: tuple[float, float, float]
    K: int = 4
    spacing: float = 0.026
    orientation: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("array needs at least one microphone")
        if self.spacing <= 0:
            raise ValueError("microphone spacing must be positive")
        o = np.asarray(self.orientation, dtype=float)
        norm = np.linalg.norm(o)
        if norm == 0 or abs(o[2]) > 1e-12:
            raise ValueError("orientation must be a nonzero vector in the x-y plane")
        object.__setattr__(self, "orientation", tuple(float(v) for v in o / norm))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def axis(self) -> np.ndarray:
        return np.asarray(self.orientation[:2])

    @property
    def broadside(self) -> np.ndarray:
        ox, oy = self.orientation[:2]
        return np.array([-oy, ox])

    def element_offsets(self) -> np.ndarray:
        """Signed offsets of each element along the array axis, in meters."""
        return (np.arange(self.K) - (self.K - 1) / 2) * self.spacing

    def positions(self) -> np.ndarray:
        """Element coordinates, shape (K, 3)."""
        return np.asarray(self.center) + np.outer(self.element_offsets(), self.orientation)

    def to_local(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map room-frame (x, y) points to (bearing in degrees, range in meters).

        Bearings lie in (-180, 180]; points behind the array come out with
        ``|theta| > 90``.
        """
        rel = np.asarray(xy, dtype=float) - np.asarray(self.center[:2])
        front = rel @ self.broadside
        lateral = -(rel @ self.axis)
        return np.degrees(np.arctan2(lateral, front)), np.hypot(rel[..., 0], rel[..., 1])

    def from_local(self, theta_deg, dist) -> np.ndarray:
        t = np.radians(np.asarray(theta_deg, dtype=float))
        d = np.asarray(dist, dtype=float)
        direction = np.cos(t)[..., None] * self.broadside - np.sin(t)[..., None] * self.axis
        return np.asarray(self.center[:2]) + d[..., None] * direction


@dataclass(frozen=True)
class RoomScenario:
    room_dims: tuple[float, float, float]
    source_pos: tuple[float, float, float]
    arrays: tuple[MicArray, ...] = ()
    rt60: float = 0.6
    c: float = 340.0
    fs: float = 16000.0

    def __post_init__(self):
        object.__setattr__(self, "arrays", tuple(self.arrays))
        dims = np.asarray(self.room_dims, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError("room dimensions must be three positive lengths")
        if self.rt60 < 0:
            raise ValueError("rt60 must be non-negative")
        if self.c <= 0 or self.fs <= 0:
            raise ValueError("speed of sound and sampling rate must be positive")
        if not self.contains(self.source_pos):
            raise ValueError(f"source {self.source_pos} is not strictly inside the room")
        for arr in self.arrays:
            for p in arr.positions():
                if not self.contains(p):
                    raise ValueError(f"microphone {tuple(p)} is not strictly inside the room")

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.room_dims)))

    @property
    def absorption(self) -> float:
        """Uniform wall absorption realising ``rt60``; ``rt60 == 0`` means anechoic."""
        if self.rt60 == 0:
            return 1.0
        return rt60_to_absorption(self.room_dims, self.rt60)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.room_dims))

    def mic_positions(self) -> np.ndarray:
        """All microphones stacked array by array, shape (M, 3)."""
        if not self.arrays:
            return np.zeros((0, 3))
        return np.vstack([a.positions() for a in self.arrays])

    def default_max_order(self) -> int:
        """Reflection order whose images still cover the RT60 decay tail."""
        return max(20, math.ceil(60 * self.rt60))

    def default_rir_len(self) -> int:
        direct_max = math.ceil(self.diagonal * self.fs / self.c) + FRACTIONAL_DELAY_TAPS
        return max(math.ceil(1.2 * self.rt60 * self.fs), direct_max)


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    fs: float
    mic_index: int = 0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if not np.all(np.isfinite(taps)):
            raise ValueError("impulse response contains non-finite taps")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class MicSignals:
    samples: np.ndarray
    fs: float
    snr_db: float = math.inf
    clean: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2:
            raise ValueError("microphone signals must be an M x L matrix")
        if not np.all(np.isfinite(samples)):
            raise ValueError("microphone signals contain non-finite values")
        object.__setattr__(self, "samples", samples)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def L(self) -> int:
        return self.samples.shape[1]


def rt60_to_absorption(room_dims, rt60: float) -> float:
    """Invert Sabine's formula for a uniform absorption coefficient."""
    if rt60 <= 0:
        raise ValueError("rt60 must be positive")
    lx, ly, lz = (float(v) for v in room_dims)
    if min(lx, ly, lz) <= 0:
        raise ValueError("room dimensions must be positive")
    volume = lx * ly * lz
    area = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE_CONSTANT * volume / (rt60 * area)
    if alpha > 1:
        raise ValueError(f"room cannot achieve requested RT60 of {rt60} s (alpha = {alpha:.3f})")
    return alpha


def image_sources(room_dims, source_pos, max_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Image positions and their reflection orders for a shoebox room.

    Returns ``(positions, orders)`` with shapes (I, 3) and (I,).
    """
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    dims = np.asarray(room_dims, dtype=float)
    src = np.asarray(source_pos, dtype=float)
    n = np.arange(-((max_order + 1) // 2), (max_order + 1) // 2 + 1)
    coords, orders = [], []
    for axis in range(3):
        m, q = np.meshgrid(n, (0, 1), indexing="ij")
        m, q = m.ravel(), q.ravel()
        order = np.abs(m - q) + np.abs(m)
        keep = order <= max_order
        coords.append((1 - 2 * q[keep]) * src[axis] + 2 * m[keep] * dims[axis])
        orders.append(order[keep])
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    ox, oy, oz = np.meshgrid(*orders, indexing="ij")
    total = (ox + oy + oz).ravel()
    keep = total <= max_order
    pos = np.stack([gx.ravel()[keep], gy.ravel()[keep], gz.ravel()[keep]], axis=1)
    return pos, total[keep]


def _fractional_delay_weights(delays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed sinc interpolation taps around each (fractional) delay."""
    half = FRACTIONAL_DELAY_TAPS // 2
    base = np.floor(delays).astype(np.int64)
    idx = base[:, None] + np.arange(1 - half, half + 1)[None, :]
    offset = idx - delays[:, None]
    weights = np.sinc(offset) * 0.5 * (1 + np.cos(np.pi * offset / half))
    return idx, weights


def generate_rir(
    scenario: RoomScenario,
    mic_pos,
    max_order: int | None = None,
    rir_len: int | None = None,
    absorption: float | None = None,
    mic_index: int = 0,
    highpass: bool = True,
) -> ImpulseResponse:
    """Image-method impulse response from the scenario's source to ``mic_pos``.

    Each image contributes ``beta**order / (4 pi r)`` (with ``beta =
    sqrt(1 - absorption)``) spread over an 8-tap windowed sinc at the
    fractional delay ``r * fs / c``.  With ``highpass`` the taps go through
    the Allen-Berkley 100 Hz high-pass, which removes the DC build-up of
    the all-positive image sum in the late tail.
    """
    mic = np.asarray(mic_pos, dtype=float)
    if not scenario.contains(mic):
        raise ValueError(f"microphone {tuple(mic)} is not strictly inside the room")
    if max_order is None:
        max_order = scenario.default_max_order()
    if rir_len is None:
        rir_len = scenario.default_rir_len()
    alpha = scenario.absorption if absorption is None else float(absorption)
    if not 0 < alpha <= 1:
        raise ValueError("absorption must lie in (0, 1]")
    direct = float(np.linalg.norm(np.asarray(scenario.source_pos) - mic))
    if direct < 1e-9:
        raise ValueError("zero-distance path between source and microphone")
    if rir_len < direct * scenario.fs / scenario.c:
        raise ValueError("rir_len is shorter than the direct-path delay")

    beta = math.sqrt(1.0 - alpha)
    pos, orders = image_sources(scenario.room_dims, scenario.source_pos, max_order)
    if beta == 0.0:
        keep = orders == 0
        pos, orders = pos[keep], orders[keep]
    dist = np.linalg.norm(pos - mic, axis=1)
    delays = dist * scenario.fs / scenario.c
    keep = delays < rir_len + FRACTIONAL_DELAY_TAPS
    dist, delays, orders = dist[keep], delays[keep], orders[keep]
    amps = beta ** orders / (4 * np.pi * dist)

    idx, weights = _fractional_delay_weights(delays)
    weights = weights * amps[:, None]
    valid = (idx >= 0) & (idx < rir_len)
    taps = np.bincount(idx[valid], weights=weights[valid], minlength=rir_len)[:rir_len]
    if highpass:
        taps = _allen_berkley_highpass(taps, scenario.fs)
    return ImpulseResponse(taps=taps, fs=scenario.fs, mic_index=mic_index)


def _allen_berkley_highpass(x: np.ndarray, fs: float, cutoff: float = 100.0) -> np.ndarray:
    w = 2 * np.pi * cutoff / fs
    r1 = math.exp(-w)
    b1, b2 = 2 * r1 * math.cos(w), -r1 * r1
    return sps.lfilter([1.0, -(1 + r1), r1], [1.0, -b1, -b2], x)


def scenario_rirs(scenario: RoomScenario, max_order: int | None = None, rir_len: int | None = None, **kwargs) -> list[ImpulseResponse]:
    mics = scenario.mic_positions()
    return [
        generate_rir(scenario, p, max_order=max_order, rir_len=rir_len, mic_index=i, **kwargs)
        for i, p in enumerate(mics)
    ]


def convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution along the last axis."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if x.shape[-1] == 0 or h.shape[-1] == 0:
        raise ValueError("cannot convolve empty sequences")
    return sps.fftconvolve(x, h, axes=-1)


def synthesize_mic_signals(
    rirs: Sequence[ImpulseResponse],
    source_signal: np.ndarray,
    snr_db: float,
    L: int | None = None,
    rng: np.random.Generator | int | None = None,
) -> MicSignals:
    """Convolve the source with each RIR and add white Gaussian noise.

    Noise in every channel is rescaled so that the realised channel SNR equals
    ``snr_db``; pass ``math.inf`` to disable noise.
    """
    s = np.asarray(source_signal, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("source signal must be a non-empty mono sequence")
    if not np.any(s):
        raise ValueError("silent source")
    if not rirs:
        raise ValueError("need at least one impulse response")
    fs = rirs[0].fs
    if any(r.fs != fs for r in rirs):
        raise ValueError("all impulse responses must share one sampling rate")
    rir_len = max(len(r.taps) for r in rirs)
    H = np.zeros((len(rirs), rir_len))
    for i, r in enumerate(rirs):
        H[i, : len(r.taps)] = r.taps
    if L is None:
        L = s.size
    if L > s.size + rir_len - 1:
        raise ValueError("requested length exceeds the full convolution length")

    clean = convolve(s[None, :], H)[:, :L]
    if math.isinf(snr_db) and snr_db > 0:
        return MicSignals(samples=clean.copy(), fs=fs, snr_db=math.inf, clean=clean)

    rng = np.random.default_rng(rng)
    noise = rng.standard_normal(clean.shape)
    p_signal = np.mean(clean**2, axis=1)
    p_target = p_signal * 10 ** (-snr_db / 10)
    noise *= np.sqrt(p_target / np.mean(noise**2, axis=1))[:, None]
    noisy = clean + noise
    p_noise = np.mean(noise**2, axis=1)
    with np.errstate(divide="ignore"):
        realized = float(np.mean(10 * np.log10(p_signal / p_noise)))
    return MicSignals(samples=noisy, fs=fs, snr_db=realized, clean=clean)


def _normalize_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x**2))
    if rms == 0:
        raise ValueError("silent source")
    return x / rms


def _read_wav(path, fs: float) -> np.ndarray:
    try:
        rate, data = wavfile.read(Path(path))
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise ValueError(f"{path} is not mono ({data.shape[1]} channels)")
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(float)
    else:
        raise ValueError(f"unsupported sample format {data.dtype} in {path}")
    if rate != fs:
        g = math.gcd(int(rate), int(fs))
        x = sps.resample_poly(x, int(fs) // g, int(rate) // g)
    return x


def make_source_signal(
    kind: str,
    duration_s: float,
    fs: float = 16000.0,
    seed: int | None = 0,
    band: tuple[float, float] = (300.0, 6000.0),
    path: str | Path | None = None,
    period: int = 256,
) -> np.ndarray:
    """Unit-RMS mono source signal of ``round(duration_s * fs)`` samples.

    ``kind`` is one of ``bandlimited-noise``, ``chirp``, ``pulse-train`` or
    ``file``.  The pulse train repeats a zero-phase band-limited pulse every
    ``period`` samples.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration_s * fs))
    lo, hi = band
    if not 0 <= lo < hi <= fs / 2:
        raise ValueError(f"invalid band {band} for fs = {fs}")

    if kind == "bandlimited-noise":
        rng = np.random.default_rng(seed)
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1 / fs)
        spec[(f < lo) | (f > hi)] = 0
        x = np.fft.irfft(spec, n)
    elif kind == "chirp":
        t = np.arange(n) / fs
        x = sps.chirp(t, f0=max(lo, 1.0), t1=duration_s, f1=hi, method="linear")
    elif kind == "pulse-train":
        f = np.fft.rfftfreq(period, 1 / fs)
        mag = np.where((f >= lo) & (f <= hi), 1.0, 0.0)
        # taper the band edges so the pulse has short sidelobes
        mag *= np.sin(np.pi * np.clip((f - lo) / (hi - lo), 0, 1)) ** 2
        pulse = np.fft.irfft(mag, period)
        x = np.tile(pulse, n // period + 1)[:n]
    elif kind == "file":
        if path is None:
            raise ValueError("file source needs a path")
        x = _read_wav(path, fs)
        if x.size < n:
            raise ValueError(f"{path} is shorter than {duration_s} s")
        x = x[:n]
    else:
        raise ValueError(f"unknown source kind {kind!r}")
    return _normalize_rms(x)
