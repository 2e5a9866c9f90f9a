import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steerloc.spectral import (FramePlan, NoiseEstimate, accumulate_block, compute_weights,
                               cross_spectrum, frame_stream, spectrum, update_noise_estimate)

RECT = FramePlan(window="rect")


def _frames(x, L=1024, window="rect"):
    plan = FramePlan(L, L // 2, 48000.0, window)
    return [spectrum(f, t) for t, f in enumerate(frame_stream(x, plan))]


def _block(x, L=256, n=4, **kw):
    """Spectral frames of n non-overlapping rectangular frames (hop L)."""
    frames = [spectrum(x[:, t * L:(t + 1) * L], t) for t in range(n)]
    kw.setdefault("weighting", False)
    corrs, _ = accumulate_block(frames, NoiseEstimate(), kind=None, **kw)
    return corrs


# -- framing ---------------------------------------------------------------------

def test_frame_count_one_second():
    assert frame_stream(np.zeros((2, 48000)), RECT).shape == (92, 2, 1024)
    assert RECT.frame_count(48000) == (48000 - 1024) // 512 + 1 == 92


def test_frame_count_boundaries():
    assert frame_stream(np.zeros((3, 1024)), RECT).shape[0] == 1
    with pytest.raises(ValueError):
        frame_stream(np.zeros((3, 1023)), RECT)
    with pytest.raises(ValueError):
        frame_stream([np.zeros(2000), np.zeros(2001)], RECT)


def test_frame_contents_and_window():
    x = np.arange(3000, dtype=float)[None, :].repeat(2, axis=0)
    f = frame_stream(x, RECT)
    np.testing.assert_array_equal(f[3, 1], np.arange(3 * 512, 3 * 512 + 1024))
    hann = FramePlan()
    w = hann.window_array()
    np.testing.assert_allclose(frame_stream(x, hann)[2, 0], x[0, 1024:2048] * w)
    # periodic Hann at 50% overlap sums to a constant
    np.testing.assert_allclose(w[:512] + w[512:], 1.0, atol=1e-15)


@pytest.mark.parametrize("kw", [dict(frame_length=1000, hop=500), dict(hop=256),
                                dict(window="kaiser")])
def test_frame_plan_validation(kw):
    with pytest.raises(ValueError):
        FramePlan(**kw)


def test_block_times():
    p = FramePlan()
    assert p.block_end_time(0, 4) == pytest.approx((3 * 512 + 1024) / 48000)
    assert p.block_center_time(0, 4) == pytest.approx(0.5 * (3 * 512 + 1024) / 48000)


# -- spectra ---------------------------------------------------------------------

def test_zero_frame_spectrum():
    sf = spectrum(np.zeros((4, 1024)))
    assert not np.any(sf.X) and not np.any(sf.Y)


def test_impulse_spectrum():
    frame = np.zeros((3, 1024))
    frame[1, 0] = 1.0
    sf = spectrum(frame)
    np.testing.assert_allclose(np.abs(sf.X[1]), 1.0)
    np.testing.assert_allclose(sf.Y, 1.0 / 3.0)


def test_cosine_spectrum_concentrated():
    n = np.arange(1024)
    frame = np.tile(np.cos(2 * np.pi * 10 * n / 1024), (2, 1))
    sf = spectrum(frame)
    # direct DFT of a bin-centered cosine: L/2 at bins 10 and L-10
    direct = np.array([np.sum(frame[0] * np.exp(-2j * np.pi * k * n / 1024)) for k in (9, 10, 11)])
    np.testing.assert_allclose(sf.X[0, 9:12], direct, atol=1e-9)
    assert set(np.flatnonzero(sf.Y > 1e-12 * sf.Y.max())) == {10, 1014}
    assert sf.Y[10] == pytest.approx(512.0**2)


def test_spectrum_independent_of_memory_layout():
    frame = np.random.default_rng(5).standard_normal((8, 1024))
    a = spectrum(frame)
    b = spectrum(np.asfortranarray(frame))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)


@given(arrays(np.float64, (3, 64), elements=st.floats(-1e3, 1e3)))
def test_spectrum_symmetry_and_nonnegative_power(frame):
    sf = spectrum(frame)
    np.testing.assert_allclose(sf.X[:, 1:], np.conj(sf.X[:, :0:-1]), atol=1e-6)
    assert np.all(sf.Y >= 0)


# -- noise tracking --------------------------------------------------------------

def test_noise_first_call_copies():
    Y = np.array([1.0, 2.0, 0.0])
    est = update_noise_estimate(NoiseEstimate(), Y)
    np.testing.assert_array_equal(est.power, [1.0, 2.0, 1e-12])
    assert est.count == 1


def test_noise_converges_to_constant():
    Y = np.full(8, 3.0)
    est = NoiseEstimate(np.full(8, 6.0), 1)
    for _ in range(int(5 / 0.05)):
        est = update_noise_estimate(est, Y)
    np.testing.assert_allclose(est.power, Y, rtol=0.01)


def test_noise_zero_input_hits_floor():
    est = update_noise_estimate(NoiseEstimate(), np.ones(4))
    for _ in range(2000):
        est = update_noise_estimate(est, np.zeros(4))
    np.testing.assert_array_equal(est.power, 1e-12)


def test_noise_alternating_stays_low():
    lam, r = 0.05, 1.1
    est = NoiseEstimate()
    ref = None
    for t in range(2000):
        y = 1.0 if t % 2 == 0 else 100.0
        est = update_noise_estimate(est, np.array([y]), rate=lam, clamp=r)
        # scalar recurrence oracle
        ref = y if ref is None else max((1 - lam) * ref + lam * min(y, r * ref), 1e-12)
    assert est.power[0] == pytest.approx(ref, rel=1e-12)
    assert est.power[0] < 2.0          # far below the mean of 50.5


# -- weights ---------------------------------------------------------------------

def test_weight_examples():
    YN = np.array([2.0, 1.0, 4.0])
    w = compute_weights(np.array([2.0, 1024.0, 2.0]), YN, 0.1)
    assert w[0] == 1.0
    assert w[1] == pytest.approx(2.0, rel=1e-12)
    assert w[2] == 1.0


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_weights_at_least_one_and_monotone(y, y2, yn):
    lo, hi = sorted((y, y2))
    w = compute_weights(np.array([lo, hi]), np.array([yn, yn]))
    assert w[0] >= 1.0 and w[1] >= w[0]


# -- cross-correlation -----------------------------------------------------------

def _whitened_circular_xcorr(frames, i, j):
    """Brute-force oracle: time-domain circular correlation of the whitened signals."""
    acc = 0.0
    for sf in frames:
        A = sf.X[i] / np.abs(sf.X[i])
        B = sf.X[j] / np.abs(sf.X[j])
        a, b = np.fft.ifft(A), np.fft.ifft(B)
        L = a.size
        acc = acc + np.array([np.sum(np.conj(a) * np.roll(b, -tau)) for tau in range(L)]).real
    return acc / len(frames)


def test_identical_channels_peak_at_zero():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(1024)
    corrs = _block(np.vstack([s, s]))
    assert int(np.argmax(corrs.values[0])) == 0


def test_shifted_channel_peak_matches_oracle():
    rng = np.random.default_rng(4)
    L = 256
    s = rng.standard_normal(4 * L)
    frames = [spectrum(np.vstack([s[t * L:(t + 1) * L], np.roll(s[t * L:(t + 1) * L], 10)]), t)
              for t in range(4)]
    corrs, _ = accumulate_block(frames, NoiseEstimate(), kind="short", weighting=False)
    oracle = _whitened_circular_xcorr(frames, 0, 1)
    np.testing.assert_allclose(corrs.values[0], oracle, atol=1e-9)
    assert int(np.argmax(corrs.values[0])) == 10 == int(np.argmax(oracle))
    assert corrs.lag_value(0, 10) == pytest.approx(1.0)


def test_zero_block_gives_zero_correlation():
    corrs = _block(np.zeros((3, 1024)), weighting=True)
    assert np.all(corrs.values == 0.0)
    assert np.all(np.isfinite(corrs.values))


def test_block_size_enforced():
    frames = _frames(np.zeros((2, 1024 + 512 * 4)))
    assert len(frames) == 5
    with pytest.raises(ValueError):
        accumulate_block(frames, NoiseEstimate(), kind="short")
    with pytest.raises(ValueError):
        accumulate_block(frames, NoiseEstimate(), kind="medium")
    with pytest.raises(ValueError):
        accumulate_block([], NoiseEstimate())
    corrs, noise = accumulate_block(frames[:4], NoiseEstimate(), kind="short")
    assert (corrs.kind, corrs.first_frame, corrs.frame_count) == ("short", 0, 4)
    assert noise.count == 5     # initialization plus one update per frame


def test_weights_use_pre_frame_noise():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 4 * 256)) * np.repeat([1, 1, 10, 1], 256)
    frames = [spectrum(x[:, t * 256:(t + 1) * 256], t) for t in range(4)]
    corrs, _ = accumulate_block(frames, NoiseEstimate(), kind="short")
    noise = update_noise_estimate(NoiseEstimate(), frames[0].Y)
    G = 0
    for sf in frames:
        G = G + cross_spectrum(sf, compute_weights(sf.Y, noise.power), True)
        noise = update_noise_estimate(noise, sf.Y)
    np.testing.assert_allclose(corrs.values, np.fft.irfft(G / 4, n=256), atol=1e-12)


@given(arrays(np.float64, (3, 4 * 64), elements=st.floats(-10, 10)))
def test_whitened_correlation_bounded(x):
    frames = [spectrum(x[:, t * 64:(t + 1) * 64], t) for t in range(4)]
    corrs, _ = accumulate_block(frames, NoiseEstimate(), weighting=False)
    assert np.all(np.abs(corrs.values) <= 1.0 + 1e-9)


@given(arrays(np.float64, (2, 4 * 64), elements=st.floats(-10, 10)))
def test_pair_order_reverses_lags(x):
    fwd = _block(x, L=64, weighting=True).values[0]
    rev = _block(x[::-1], L=64, weighting=True).values[0]
    np.testing.assert_allclose(rev, np.roll(fwd[::-1], 1), atol=1e-12)


@given(arrays(np.float64, (2, 4 * 256), elements=st.floats(-10, 10)))
def test_plain_cross_power_equals_time_domain(x):
    R = _block(x, whiten=False).values[0]
    ref = np.zeros(256)
    for t in range(4):
        a, b = x[0, t * 256:(t + 1) * 256], x[1, t * 256:(t + 1) * 256]
        ref += np.array([np.dot(a, np.roll(b, -tau)) for tau in range(256)])
    ref /= 4
    scale = max(np.abs(ref).max(), 1e-300)
    assert np.abs(R - ref).max() <= 1e-9 * scale + 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(1e-2, 1e2), st.integers(0, 2))
def test_whitening_scale_invariance(seed, scale, ch):
    x = np.random.default_rng(seed).standard_normal((3, 4 * 64))
    base = _block(x, L=64).values
    y = x.copy()
    y[ch] *= scale
    np.testing.assert_allclose(_block(y, L=64).values, base, atol=1e-6)
    # a global scale leaves the noise weights unchanged too
    np.testing.assert_allclose(_block(x * scale, L=64, weighting=True).values,
                               _block(x, L=64, weighting=True).values, atol=1e-6)


def test_correlation_csv():
    rng = np.random.default_rng(0)
    corrs = _block(rng.standard_normal((3, 1024)))
    lines = corrs.to_csv().splitlines()
    assert lines[0] == "lag,R_0_1,R_0_2,R_1_2"
    assert len(lines) == 257
    assert lines[1].startswith("0,") and lines[-1].startswith("-1,")
