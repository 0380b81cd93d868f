import numpy as np
import pytest

from sslide.acoustics import MicArray
from sslide.spectral import SpectralFrame, median_frequency, positive_freqs

FS = 16000.0
C = 340.0
N_FFT = 256


def steering_frame(thetas, dists, K=4, u=0.026, freqs=None, f0=None, c=C):
    """Noise-free frame that follows the beam-power steering model exactly, one source per array."""
    freqs = positive_freqs(FS, N_FFT) if freqs is None else np.asarray(freqs, dtype=float)
    f0 = median_frequency(FS, N_FFT) if f0 is None else f0
    thetas, dists = np.atleast_1d(thetas), np.atleast_1d(dists)
    i = np.arange(K)[:, None]
    blocks = []
    for th, d in zip(thetas, dists):
        a = np.exp(-2j * np.pi * i * u * np.sin(np.radians(th)) * f0 / c)
        r = np.exp(-2j * np.pi * freqs[None, :] * d / c)
        blocks.append(a * r)
    return SpectralFrame(bins=np.stack(blocks, axis=1), freqs=freqs)


def schroeder_t20(h, fs):
    """RT60 from the -5..-25 dB slope of the backward-integrated energy decay."""
    e = np.cumsum(h[::-1] ** 2)[::-1]
    edc = 10 * np.log10(e / e[0] + 1e-300)
    t = np.arange(h.size) / fs
    sel = (edc <= -5) & (edc >= -25)
    slope, _ = np.polyfit(t[sel], edc[sel], 1)
    return -60.0 / slope


@pytest.fixture
def line_array():
    return MicArray(center=(0.0, 0.0, 0.0), K=4, spacing=0.026, orientation=(0.0, 1.0, 0.0))


def plane_wave(array, theta_deg, L=16000, fs=FS, c=C, seed=0, band=(0.0, 8000.0)):
    """(K, L) far-field recording of noise arriving from ``theta_deg``.

    Delays come from the element positions, applied as exact circular
    shifts in the frequency domain.  Keep it full-band for SRP-PHAT: empty
    bins fill with framing leakage at zero lag and PHAT weights them fully.
    """
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(L))
    f = np.fft.rfftfreq(L, 1 / fs)
    spec[(f < band[0]) | (f > band[1])] = 0
    toward = array.from_local(theta_deg, 1.0) - np.asarray(array.center[:2])
    rel = array.positions()[:, :2] - np.asarray(array.center[:2])
    tau = -(rel @ toward) / c
    return np.fft.irfft(spec[None, :] * np.exp(-2j * np.pi * f[None, :] * tau[:, None]), L)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
