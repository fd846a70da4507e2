import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from autocw import acoustics as ac
from autocw.acoustics import (AcousticsError, CorrelationSeries, ImpulseResponse, RoomSpec, Signal,
                              autocorr_effective_length, avg_xcorr_envelope, convolve,
                              exp_decay_ir, image_method_ir, mix_noise_at_snr, schroeder_t60,
                              side_energy_ratio, xcorr)

FS = 16000


def direct_conv(x, h):
    out = np.zeros(len(x) + len(h) - 1)
    for i in range(len(x)):
        for j in range(len(h)):
            out[i + j] += x[i] * h[j]
    return out


def direct_xcorr(x, y, max_lag):
    """R_xy[n] = sum_k x[k] y[k+n] by brute force."""
    vals = []
    for n in range(-max_lag, max_lag + 1):
        s = 0.0
        for k in range(len(x)):
            if 0 <= k + n < len(y):
                s += x[k] * y[k + n]
        vals.append(s)
    return np.array(vals)


def sig(a):
    return Signal(np.asarray(a, dtype=float), FS)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# --- types --------------------------------------------------------------------

def test_signal_rejects_nan_and_bad_rate():
    with pytest.raises(AcousticsError):
        Signal(np.array([0.0, np.nan]), FS)
    with pytest.raises(AcousticsError):
        Signal(np.zeros(3), 0)


def test_impulse_response_causality_check():
    with pytest.raises(AcousticsError):
        ImpulseResponse(sig([0.0, 1e-6, 1.0]), direct_path_index=2)
    h = ImpulseResponse(sig([0.0, 1e-13, 1.0]), direct_path_index=2)
    assert h.direct_path_index == 2


def test_correlation_series_needs_odd_length():
    with pytest.raises(AcousticsError):
        CorrelationSeries(np.zeros(4))
    c = CorrelationSeries(np.arange(5.0))
    assert c.max_lag == 2 and c.center_index == 2 and c.at(-2) == 0.0


# --- image method --------------------------------------------------------------

def test_anechoic_room_single_direct_sample():
    room = RoomSpec((10.0, 10.0, 10.0), (3.0, 5.0, 5.0), (4.715, 5.0, 5.0),
                    wall_reflection_coefficient=0.0)
    h = image_method_ir(room)
    nz = np.flatnonzero(h.samples)
    assert nz.tolist() == [80]
    assert h.direct_path_index == 80
    assert h.samples[80] == pytest.approx(1.0 / (4 * math.pi * 1.715), rel=1e-12)


def test_image_method_hits_sabine_target_with_enough_order():
    room = RoomSpec((6.0, 5.0, 3.0), (1.5, 1.2, 1.4), (4.1, 3.3, 1.6), target_t60=0.5,
                    max_reflection_order=25, length_s=0.6)
    h = image_method_ir(room)
    assert 0.375 <= schroeder_t60(h) <= 0.625


def test_calibrated_image_ir_matches_target():
    room = RoomSpec((6.0, 5.0, 3.0), (1.5, 1.2, 1.4), (4.1, 3.3, 1.6), target_t60=0.5,
                    max_reflection_order=None, length_s=0.6)
    h = ac.calibrated_image_ir(room, rel_tol=0.02)
    assert abs(h.t60_estimate - 0.5) <= 0.01
    assert abs(schroeder_t60(h) - 0.5) <= 0.01


def test_image_direct_path_index_rounding():
    room = RoomSpec((6.0, 5.0, 3.0), (1.0, 1.0, 1.0), (2.3, 1.7, 1.2), target_t60=0.3)
    h = image_method_ir(room)
    d = math.dist(room.source_position, room.mic_position)
    assert h.direct_path_index == round(d * FS / 343.0)
    assert np.all(h.samples[:h.direct_path_index] == 0)


@pytest.mark.parametrize("kwargs", [
    dict(dimensions=(6, 5, 3), source_position=(7, 1, 1), mic_position=(1, 1, 1), target_t60=0.3),
    dict(dimensions=(6, 0, 3), source_position=(1, 1, 1), mic_position=(2, 1, 1), target_t60=0.3),
    dict(dimensions=(6, 5, 3), source_position=(1, 1, 1), mic_position=(2, 1, 1),
         wall_reflection_coefficient=1.0),
])
def test_image_method_errors(kwargs):
    with pytest.raises(AcousticsError):
        image_method_ir(RoomSpec(**kwargs))


def test_sabine_coefficient_round_trip():
    dims = (6.0, 5.0, 3.0)
    beta = ac.sabine_reflection_coefficient(dims, 0.5)
    v = 90.0
    s = 2 * (30 + 18 + 15)
    assert 0.161 * v / (s * (1 - beta ** 2)) == pytest.approx(0.5, rel=1e-12)


# --- exp decay -------------------------------------------------------------------

def test_exp_decay_t60_estimate():
    h = exp_decay_ir(0.5, FS, 0.6, seed=7)
    assert 0.45 <= schroeder_t60(h) <= 0.55


def test_exp_decay_deterministic():
    a = exp_decay_ir(0.5, FS, 0.6, seed=7)
    b = exp_decay_ir(0.5, FS, 0.6, seed=7)
    assert np.array_equal(a.samples, b.samples)


def test_decay_envelope_is_60db_at_t60():
    assert ac.decay_envelope(0.5, 0.5) == pytest.approx(1e-3, rel=1e-12)
    assert ac.decay_envelope(0.0, 0.5) == 1.0


@pytest.mark.parametrize("t60,fs", [(0.0, FS), (-1.0, FS), (0.5, 0)])
def test_exp_decay_errors(t60, fs):
    with pytest.raises(AcousticsError):
        exp_decay_ir(t60, fs, 1.0, seed=0)


# --- convolution ------------------------------------------------------------------

def test_convolve_identity_and_shift(rng):
    x = rng.standard_normal(20)
    y = convolve(sig(x), ac.identity_ir(FS))
    assert np.array_equal(y.samples, x)
    h = np.zeros(4)
    h[3] = 1.0
    y = convolve(sig(x), sig(h))
    assert len(y) == 23
    np.testing.assert_allclose(y.samples[3:], x, atol=1e-12)
    np.testing.assert_allclose(y.samples[:3], 0, atol=1e-12)


def test_convolve_matches_double_loop(rng):
    x, h = rng.standard_normal(8), rng.standard_normal(3)
    y = convolve(sig(x), sig(h)).samples
    ref = direct_conv(x, h)
    assert np.max(np.abs(y - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_convolve_errors():
    with pytest.raises(AcousticsError):
        convolve(sig([1.0]), Signal(np.ones(2), 8000))
    with pytest.raises(AcousticsError):
        convolve(sig([]), sig([1.0]))


# --- noise -------------------------------------------------------------------------

def test_mix_noise_infinite_snr_is_copy(rng):
    y = sig(rng.standard_normal(50))
    out = mix_noise_at_snr(y, sig(rng.standard_normal(50)), math.inf)
    assert np.array_equal(out.samples, y.samples)


def test_mix_noise_equal_powers_alpha_one(rng):
    y = rng.standard_normal(64)
    out = mix_noise_at_snr(sig(y), sig(y), 0.0)
    np.testing.assert_allclose(out.samples, 2 * y, rtol=1e-12)


def test_mix_noise_hits_target_snr(rng):
    y, v = rng.standard_normal(1000), rng.standard_normal(700)
    out = mix_noise_at_snr(sig(y), sig(v), 10.0).samples
    added = out - y
    assert abs(10 * np.log10(np.mean(y ** 2) / np.mean(added ** 2)) - 10.0) <= 0.01


def test_mix_noise_zero_power():
    with pytest.raises(AcousticsError):
        mix_noise_at_snr(sig([1.0, 2.0]), sig([0.0, 0.0]), 10.0)


# --- T60 -------------------------------------------------------------------------------

def test_schroeder_on_ideal_envelope():
    t = np.arange(int(0.6 * FS)) / FS
    h = sig(ac.decay_envelope(t, 0.5))
    assert schroeder_t60(h) == pytest.approx(0.5, rel=0.01)


def test_schroeder_on_exp_decay_seed1():
    h = exp_decay_ir(0.3, FS, 0.4, seed=1)
    assert schroeder_t60(h) == pytest.approx(0.3, rel=0.10)


def test_schroeder_single_impulse_errors():
    with pytest.raises(AcousticsError, match="decay range not reached"):
        schroeder_t60(ac.identity_ir(FS))


# --- correlation ------------------------------------------------------------------------

def test_xcorr_lag0_is_energy(rng):
    x = rng.standard_normal(30)
    assert xcorr(sig(x), sig(x), 5).at(0) == pytest.approx(np.sum(x * x), rel=1e-12)


def test_xcorr_detects_shift():
    x, y = np.zeros(16), np.zeros(16)
    x[0], y[5] = 1.0, 1.0
    c = xcorr(sig(x), sig(y), 8)
    assert np.flatnonzero(np.abs(c.values) > 1e-12).tolist() == [8 + 5]


def test_xcorr_matches_direct_sum(rng):
    x, y = rng.standard_normal(17), rng.standard_normal(23)
    np.testing.assert_allclose(xcorr(sig(x), sig(y), 9).values, direct_xcorr(x, y, 9),
                               rtol=1e-9, atol=1e-12)


def test_xcorr_convolution_identity_frozen():
    rng = np.random.default_rng(99)
    x, h = rng.standard_normal(64), rng.standard_normal(16)
    y = direct_conv(x, h)
    lags = 40
    lhs = direct_xcorr(x, y, lags)
    rxx = direct_xcorr(x, x, 63)                       # lags -63..63
    rhs = np.array([sum(h[m] * rxx[n - m + 63] for m in range(16) if abs(n - m) <= 63)
                    for n in range(-lags, lags + 1)])
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)
    got = xcorr(sig(x), convolve(sig(x), sig(h)), lags).values
    np.testing.assert_allclose(got, lhs, rtol=1e-9, atol=1e-9)


@given(arrays(float, st.integers(2, 128), elements=finite),
       arrays(float, st.integers(1, 64), elements=finite))
def test_xcorr_convolution_identity_property(x, h):
    n = len(x)
    y = convolve(sig(x), sig(h))
    lags = n - 1
    lhs = xcorr(sig(x), y, lags).values
    rxx = xcorr(sig(x), sig(x), n - 1).values
    rhs = np.convolve(h, rxx)[:2 * lags + 1]          # lag -lags aligns with index 0
    scale = max(1.0, np.max(np.abs(lhs)))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * scale)


@given(arrays(float, st.integers(2, 64), elements=finite))
def test_autocorrelation_is_even(x):
    c = xcorr(sig(x), sig(x), len(x) - 1).values
    np.testing.assert_allclose(c, c[::-1], atol=1e-12 * max(1.0, np.max(np.abs(c))))


def test_xcorr_max_lag_out_of_range():
    with pytest.raises(AcousticsError):
        xcorr(sig([1.0, 2.0]), sig([1.0, 2.0, 3.0]), 2)


# --- envelope and ratios ----------------------------------------------------------------

def test_envelope_identity_is_symmetric(rng):
    xs = [sig(rng.standard_normal(FS // 2)) for _ in range(2)]
    env = avg_xcorr_envelope(xs, xs, window_ms=50, hop_ms=20)
    assert side_energy_ratio(env) == pytest.approx(1.0, abs=1e-6)


def test_envelope_two_windows_manual_average(rng):
    win = int(0.2 * FS)
    a, b = rng.standard_normal(win), rng.standard_normal(win)
    ra, rb = rng.standard_normal(win + 30), rng.standard_normal(win)
    env = avg_xcorr_envelope([sig(a), sig(b)], [sig(ra), sig(rb)])
    half = win // 2
    ref = 0.5 * (np.abs(direct_xcorr(a, ra[:win], half)) + np.abs(direct_xcorr(b, rb, half)))
    np.testing.assert_allclose(env.values, ref, rtol=1e-9, atol=1e-9)


def test_envelope_reverb_is_future_heavy(rng):
    x = sig(rng.standard_normal(FS))
    y = convolve(x, exp_decay_ir(0.78, FS, 0.9, seed=3))
    env = avg_xcorr_envelope([x], [y], window_ms=100, hop_ms=50)
    assert side_energy_ratio(env) > 1.0


def test_envelope_errors():
    with pytest.raises(AcousticsError):
        avg_xcorr_envelope([], [])
    with pytest.raises(AcousticsError):
        avg_xcorr_envelope([sig(np.ones(10))], [])


def test_side_energy_ratio_values():
    assert side_energy_ratio(CorrelationSeries([1.0, 2.0, 9.0, 2.0, 1.0])) == 1.0
    assert side_energy_ratio(CorrelationSeries([1.0, 2.0, 9.0, 3.0, 4.0])) == pytest.approx(5.0)
    with pytest.raises(AcousticsError):
        side_energy_ratio(CorrelationSeries([0.0, 0.0, 1.0, 1.0, 1.0]))


def brute_effective_lag(x, fraction):
    r = direct_xcorr(x, x, len(x) - 1)
    e = r ** 2
    mid = len(x) - 1
    total = e.sum()
    for lag in range(len(x)):
        if e[mid - lag:mid + lag + 1].sum() >= fraction * total:
            return lag


def test_effective_length_impulse_is_zero():
    x = np.zeros(64)
    x[10] = 1.0
    assert autocorr_effective_length(sig(x)) == 0.0


def test_effective_length_sinusoid_matches_scan():
    fs = 2000
    t = np.arange(fs) / fs
    x = np.sin(2 * np.pi * 100 * t)
    lag = brute_effective_lag(x, 0.5)
    assert autocorr_effective_length(Signal(x, fs), 0.5) == pytest.approx(1000.0 * lag / fs)


def test_effective_length_errors():
    with pytest.raises(AcousticsError):
        autocorr_effective_length(sig([1.0]), 1.0)
    with pytest.raises(AcousticsError):
        autocorr_effective_length(sig([]))


# --- persistence -------------------------------------------------------------------------

@pytest.mark.parametrize("float32", [True, False])
def test_wav_round_trip(tmp_path, rng, float32):
    x = sig(0.5 * rng.uniform(-1, 1, 100))
    ac.write_wav(tmp_path / "a.wav", x, float32=float32)
    y = ac.read_wav(tmp_path / "a.wav")
    assert y.sample_rate == FS
    np.testing.assert_allclose(y.samples, x.samples, atol=1e-7 if float32 else 1 / 32767)


def test_ir_sidecar_round_trip(tmp_path):
    h = exp_decay_ir(0.3, FS, 0.4, seed=2, name="room_a").with_t60()
    ac.write_ir(tmp_path / "h.wav", h)
    meta = (tmp_path / "h.txt").read_text()
    assert "direct_path_index=0" in meta and "sample_rate=16000" in meta
    g = ac.read_ir(tmp_path / "h.wav")
    assert g.name == "room_a" and g.t60_estimate == pytest.approx(h.t60_estimate)
    np.testing.assert_allclose(g.samples, h.samples, atol=1e-7)
