import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslide.acoustics import MicArray
from sslide.baselines import doa_grid, doa_mae, far_field_delays, music_doa, srp_phat_doa
from sslide.spectral import positive_freqs, stft

from conftest import FS, plane_wave

FREQS = positive_freqs(FS, 256)
ARR = MicArray((2.0, 2.0, 1.0))


def frames_of(x):
    return stft(x, 256, fs=FS).tensor()[:, :, 0, :]


def brute_music(X, array, freqs, thetas, c=340.0):
    S, K, F = X.shape
    power = np.sum(np.abs(X) ** 2, axis=(0, 1))
    out = np.zeros(len(thetas))
    used = 0
    for l in range(F):
        if power[l] < 1e-6 * power.max():
            continue
        used += 1
        R = sum(np.outer(X[s, :, l], X[s, :, l].conj()) for s in range(S)) / S
        w, V = np.linalg.eigh(R)
        En = V[:, :-1]
        for u, th in enumerate(thetas):
            a = np.exp(-2j * np.pi * freqs[l] * np.arange(K) * array.spacing * np.sin(np.radians(th)) / c)
            out[u] += 1 / np.sum(np.abs(En.conj().T @ a) ** 2)
    return out / used


def test_grid():
    g = doa_grid()
    assert g.size == 181 and g[0] == -90 and g[-1] == 90


def test_music_plane_wave_at_20():
    x = plane_wave(ARR, 20.0, seed=1)
    x += 1e-3 * np.random.default_rng(2).standard_normal(x.shape)
    est = music_doa(frames_of(x), ARR, FREQS)
    assert abs(est.theta - 20.0) <= 1.0
    thetas = doa_grid(5.0)
    ref = brute_music(frames_of(x), ARR, FREQS, thetas)
    fast = music_doa(frames_of(x), ARR, FREQS, thetas=thetas).spectrum
    np.testing.assert_allclose(fast, ref, rtol=1e-8)


def test_music_white_noise_flat():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((200, 4, 128)) + 1j * rng.standard_normal((200, 4, 128))
    spec = music_doa(X, ARR, FREQS).spectrum
    assert spec.max() / spec.min() < 3


@pytest.mark.parametrize("delta", [10.0, -25.0, 40.0])
def test_music_rotation_shifts_estimate(delta):
    theta0 = 15.0
    x = plane_wave(ARR, theta0, seed=4)
    base = music_doa(frames_of(x), ARR, FREQS).theta
    r = np.radians(delta)
    o = np.array(ARR.orientation[:2])
    rot = MicArray(ARR.center, orientation=(o[0] * np.cos(r) - o[1] * np.sin(r), o[0] * np.sin(r) + o[1] * np.cos(r), 0))
    # same wavefield: the element positions rotate, the source direction does not
    direction = ARR.from_local(theta0, 1.0)
    theta_rot = float(rot.to_local(direction)[0])
    assert theta_rot == pytest.approx(theta0 - delta)
    est = music_doa(frames_of(plane_wave(rot, theta_rot, seed=4)), rot, FREQS).theta
    assert abs((est - base) - (-delta)) <= 1.0


def test_music_rejects_rank_deficiency():
    X = np.ones((10, 4, 128), dtype=complex)
    with pytest.raises(ValueError):
        music_doa(X, ARR, FREQS, num_sources=4)
    with pytest.raises(ValueError):
        music_doa(X[:3], ARR, FREQS)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_music_phase_and_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    X = frames_of(plane_wave(ARR, float(rng.uniform(-80, 80)), L=2560, seed=seed))
    X = X + 0.05 * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, X.shape[0]))[:, None, None]
    a = music_doa(X, ARR, FREQS).spectrum
    b = music_doa(X * phases * np.sqrt(scale), ARR, FREQS).spectrum
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_srp_phat_at_minus_30():
    x = plane_wave(ARR, -30.0, seed=5)
    assert abs(srp_phat_doa(x, ARR, FS).theta + 30.0) <= 1.0


def test_srp_phat_symmetric_at_broadside():
    x = plane_wave(ARR, 0.0, seed=6)
    spec = srp_phat_doa(x, ARR, FS).spectrum
    np.testing.assert_allclose(spec, spec[::-1], rtol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=4, max_size=4))
def test_srp_phat_gain_invariance(gains):
    x = plane_wave(ARR, 33.0, L=4096, seed=7)
    a = srp_phat_doa(x, ARR, FS).spectrum
    b = srp_phat_doa(x * np.array(gains)[:, None], ARR, FS).spectrum
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_srp_phat_rejects_bad_input():
    with pytest.raises(ValueError):
        srp_phat_doa(np.zeros((4, 1024)), ARR, FS)
    with pytest.raises(ValueError):
        srp_phat_doa(np.ones((1, 1024)), MicArray((0, 0, 0), K=1), FS)


def test_pairwise_form_matches_steered_sum():
    # literal PHAT-weighted pairwise sum differs from the steered power by a constant
    x = plane_wave(ARR, 12.0, L=1024, seed=8)
    thetas = doa_grid(10.0)
    X = np.fft.fft(x.reshape(4, -1, 256), axis=2)[:, :, 1:129]
    tau = far_field_delays(ARR, thetas, 340.0)
    lit = np.zeros(len(thetas))
    for u in range(len(thetas)):
        for p in range(4):
            for q in range(4):
                cross = X[p] * X[q].conj()
                lit[u] += np.real(np.sum(cross / np.abs(cross)
                                         * np.exp(2j * np.pi * FREQS * (tau[u, p] - tau[u, q]))))
    spec = srp_phat_doa(x, ARR, FS, thetas=thetas).spectrum
    np.testing.assert_allclose(spec - spec.mean(), lit - lit.mean(), atol=1e-8 * lit.max())


@pytest.mark.parametrize("seed", range(5))
def test_estimators_agree_anechoic(seed):
    theta = float(np.random.default_rng(seed).uniform(-70, 70))
    x = plane_wave(ARR, theta, seed=seed)
    a = music_doa(frames_of(x + 1e-3 * np.random.default_rng(seed).standard_normal(x.shape)), ARR, FREQS).theta
    b = srp_phat_doa(x, ARR, FS).theta
    assert abs(a - b) <= 2.0


def test_doa_mae():
    assert doa_mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert doa_mae([12.0, -4.0], [10.0, 0.0]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        doa_mae([], [])
    with pytest.raises(ValueError):
        doa_mae([1.0], [1.0, 2.0])
