"""Snapshot framing: non-overlapping rectangular STFT of array recordings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustics import MicSignals


@dataclass(frozen=True)
class SpectralFrame:
    """One snapshot.  ``bins`` has shape (K, N, F): mic, array, frequency."""

    bins: np.ndarray
    freqs: np.ndarray
    snapshot_index: int = 0

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=complex)
        freqs = np.asarray(self.freqs, dtype=float)
        if bins.ndim != 3 or bins.shape[2] != freqs.size:
            raise ValueError("bins must be K x N x F with F matching freqs")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectral frame has non-finite values")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "freqs", freqs)

    @property
    def K(self) -> int:
        return self.bins.shape[0]

    @property
    def N(self) -> int:
        return self.bins.shape[1]

    @property
    def F(self) -> int:
        return self.bins.shape[2]

    def array(self, n: int) -> np.ndarray:
        """The (K, F) block of array ``n``."""
        return self.bins[:, n, :]

    def with_array(self, n: int, block: np.ndarray) -> "SpectralFrame":
        bins = self.bins.copy()
        bins[:, n, :] = block
        return SpectralFrame(bins=bins, freqs=self.freqs, snapshot_index=self.snapshot_index)


@dataclass(frozen=True)
class SpectrogramSet:
    frames: tuple[SpectralFrame, ...]
    fs: float
    n_fft: int

    @property
    def S(self) -> int:
        return len(self.frames)

    @property
    def freqs(self) -> np.ndarray:
        return self.frames[0].freqs

    def tensor(self) -> np.ndarray:
        """All frames stacked, shape (S, K, N, F)."""
        return np.stack([f.bins for f in self.frames])


def frame_count(L: int, n_fft: int) -> int:
    if L <= 0 or n_fft <= 0:
        raise ValueError("signal length and block size must be positive")
    return L // n_fft


def positive_freqs(fs: float, n_fft: int) -> np.ndarray:
    """Frequencies of retained bins 1..n_fft/2."""
    return np.arange(1, n_fft // 2 + 1) * fs / n_fft


def median_frequency(fs: float, n_fft: int) -> float:
    return float(np.median(positive_freqs(fs, n_fft)))


def block_dft(x: np.ndarray, n_fft: int) -> np.ndarray:
    """Full DFT of every complete non-overlapping block along the last axis.

    Returns shape ``x.shape[:-1] + (S, n_fft)``; trailing samples that do not
    fill a block are dropped.
    """
    x = np.asarray(x, dtype=float)
    S = frame_count(x.shape[-1], n_fft)
    blocks = x[..., : S * n_fft].reshape(x.shape[:-1] + (S, n_fft))
    return np.fft.fft(blocks, axis=-1)


def stft(mic_signals: MicSignals | np.ndarray, n_fft: int = 256, K: int | None = None, fs: float | None = None) -> SpectrogramSet:
    """Frame M = K * N channels into S snapshots of F = n_fft / 2 positive bins."""
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be an even power of two")
    if isinstance(mic_signals, MicSignals):
        samples, fs = mic_signals.samples, mic_signals.fs
    else:
        samples = np.atleast_2d(np.asarray(mic_signals, dtype=float))
        if fs is None:
            raise ValueError("fs is required for raw sample arrays")
    M, L = samples.shape
    if L < n_fft:
        raise ValueError(f"signal of {L} samples is shorter than one {n_fft}-sample block")
    K = M if K is None else K
    if M % K:
        raise ValueError(f"{M} channels do not split into arrays of {K}")
    N = M // K
    full = block_dft(samples, n_fft)
    pos = full[:, :, 1 : n_fft // 2 + 1]
    # channel m = n * K + k  ->  (S, K, N, F)
    cube = pos.reshape(N, K, pos.shape[1], -1).transpose(2, 1, 0, 3)
    freqs = positive_freqs(fs, n_fft)
    frames = tuple(SpectralFrame(bins=cube[s], freqs=freqs, snapshot_index=s) for s in range(cube.shape[0]))
    return SpectrogramSet(frames=frames, fs=float(fs), n_fft=n_fft)
