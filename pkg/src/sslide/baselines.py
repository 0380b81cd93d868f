"""Classical far-field DOA estimators used as comparison points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustics import MicArray
from .spectral import block_dft, positive_freqs

PHAT_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DoaEstimate:
    theta: float
    spectrum: np.ndarray
    thetas: np.ndarray


def doa_grid(resolution_deg: float = 1.0) -> np.ndarray:
    n = int(round(180 / resolution_deg)) + 1
    return np.linspace(-90.0, 90.0, n)


def far_field_delays(array: MicArray, thetas: np.ndarray, c: float) -> np.ndarray:
    """Plane-wave delay of each element relative to element 0, shape (U, K)."""
    sin_t = np.sin(np.radians(np.asarray(thetas, dtype=float)))
    return np.outer(sin_t, np.arange(array.K) * array.spacing) / c


def _finish(spectrum: np.ndarray, thetas: np.ndarray) -> DoaEstimate:
    spectrum = np.maximum(np.real(spectrum), 0.0)
    return DoaEstimate(theta=float(thetas[int(np.argmax(spectrum))]), spectrum=spectrum, thetas=thetas)


def music_doa(frames: np.ndarray, array: MicArray, freqs: np.ndarray, thetas: np.ndarray | None = None,
              num_sources: int = 1, c: float = 340.0, power_floor: float = 1e-6) -> DoaEstimate:
    """Narrowband MUSIC averaged over frequency bins.

    ``frames`` holds one array's snapshots with shape (S, K, F).  Bins whose
    power is below ``power_floor`` times the strongest bin are skipped.
    """
    X = np.asarray(frames)
    if X.ndim != 3:
        raise ValueError("frames must be S x K x F")
    S, K, F = X.shape
    if K != array.K:
        raise ValueError(f"frames carry {K} mics but the array has {array.K}")
    if num_sources >= K:
        raise ValueError("rank-deficient covariance: num_sources must be below the mic count")
    if S < K:
        raise ValueError(f"need at least {K} snapshots for a {K}x{K} covariance, got {S}")
    thetas = doa_grid() if thetas is None else np.asarray(thetas, dtype=float)
    power = np.sum(np.abs(X) ** 2, axis=(0, 1))
    if power.max() <= 0:
        raise ValueError("all-zero input")
    use = np.nonzero(power >= power_floor * power.max())[0]

    # R[l] = (1/S) sum_s x_s x_s^H for every used bin
    Xl = X[:, :, use].transpose(2, 1, 0)
    R = Xl @ Xl.conj().transpose(0, 2, 1) / S
    _, vecs = np.linalg.eigh(R)
    En = vecs[:, :, : K - num_sources]
    tau = far_field_delays(array, thetas, c)
    f = np.asarray(freqs, dtype=float)[use]
    A = np.exp(-2j * np.pi * f[:, None, None] * tau[None, :, :])
    proj = np.einsum("lkr,luk->lur", En.conj(), A)
    pseudo = 1.0 / np.maximum(np.sum(np.abs(proj) ** 2, axis=2), PHAT_FLOOR)
    return _finish(pseudo.mean(axis=0), thetas)


def srp_phat_doa(signals: np.ndarray, array: MicArray, fs: float, thetas: np.ndarray | None = None,
                 c: float = 340.0, n_fft: int = 256) -> DoaEstimate:
    """Steered response power with phase-transform weighting.

    ``signals`` are the (K, L) time-domain channels of one array.  The
    steered power ``sum_l |sum_i X_i / |X_i| exp(j w_l tau_i)|^2`` equals the
    PHAT-weighted pairwise cross-spectral sum up to a constant offset.
    """
    x = np.asarray(signals, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("SRP-PHAT needs at least two microphones")
    if x.shape[0] != array.K:
        raise ValueError(f"got {x.shape[0]} channels for a {array.K}-element array")
    if not np.any(x):
        raise ValueError("all-zero signal")
    thetas = doa_grid() if thetas is None else np.asarray(thetas, dtype=float)
    X = block_dft(x, n_fft)[:, :, 1 : n_fft // 2 + 1]
    mag = np.abs(X)
    keep = mag.min(axis=0) > PHAT_FLOOR
    Xn = np.where(keep[None], X / np.maximum(mag, PHAT_FLOOR), 0.0)
    freqs = positive_freqs(fs, n_fft)
    tau = far_field_delays(array, thetas, c)
    steer = np.exp(2j * np.pi * freqs[None, None, :] * tau[:, :, None])
    # (U, K, F) x (K, S, F) summed over mics -> (U, S, F)
    beam = np.einsum("ukf,ksf->usf", steer, Xn)
    return _finish(np.sum(np.abs(beam) ** 2, axis=(1, 2)), thetas)


def doa_mae(estimates, truths) -> float:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.size == 0:
        raise ValueError("no estimates")
    if est.shape != tru.shape:
        raise ValueError("estimates and truths differ in length")
    return float(np.mean(np.abs(est - tru)))
