import numpy as np
import pytest

from wasncal.acoustics import (
    DurationTooShortError,
    FlatPeakError,
    TdoaOptions,
    estimate_tdoas,
    fractional_delay,
    gcc_phat,
    load_impulse_responses,
    peak_quality,
    quadratic_interp,
    read_wav,
    refine_peak,
    rir_filename,
    synthesize_anechoic,
    synthesize_with_rirs,
    white_noise,
    write_wav,
)
from wasncal.geometry import Scenario
from wasncal.measurement import true_tdoas

FS = 48_000.0
C = 343.0


@pytest.fixture
def short_signal():
    return white_noise(0.05, FS, np.random.default_rng(0))


def _scenario(sensors, emitters, p, tau):
    return Scenario(np.asarray(sensors, float), np.asarray(emitters, float), np.asarray(p, float), tau, C)


def test_equidistant_sensors_have_identical_channels(short_signal):
    sc = _scenario([[0.5, 0, 0], [-0.5, 0, 0]], [[0, 0, 0.2]], [0, 0.3, 0], 0.0)
    rec = synthesize_anechoic(sc, short_signal, FS)
    a, b = rec.channels[0], rec.channels[1]
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def test_integer_sample_delay_is_a_shift(short_signal):
    k = 37
    sc = _scenario([[k * C / FS, 0, 0]], [[0, 0, 0]], [0, 0.5, 0], 0.0)
    rec = synthesize_anechoic(sc, short_signal, FS)
    expected = np.zeros(rec.slot_length)
    expected[rec.guard + k : rec.guard + k + len(short_signal)] = short_signal
    np.testing.assert_allclose(rec.channels[0], expected, atol=1e-10)


def test_channel_lag_matches_geometry_by_direct_correlation(short_signal):
    sc = _scenario([[0.9, 0.1, 0.0], [-0.4, 0.5, 0.3]], [[0.1, -0.2, 0.0]], [0, 0, 0.4], 0.0)
    rec = synthesize_anechoic(sc, short_signal, FS)
    x, y = rec.channels[0], rec.channels[1]
    full = np.correlate(y, x, mode="full")  # peak at lag = delay of y relative to x
    lag = np.argmax(full) - (len(x) - 1)
    d = np.linalg.norm(sc.emitters[0] - sc.sensors, axis=1)
    assert abs(lag - (d[1] - d[0]) / C * FS) <= 1.0


def test_signal_longer_than_slot_rejected(short_signal):
    sc = _scenario([[0.5, 0, 0]], [[0, 0, 0]], [0, 0.5, 0], 0.3)
    with pytest.raises(DurationTooShortError):
        synthesize_anechoic(sc, short_signal, FS, slot_duration=0.1)


def test_unknown_attenuation_rejected(short_signal):
    sc = _scenario([[0.5, 0, 0]], [[0, 0, 0]], [0, 0.5, 0], 0.0)
    with pytest.raises(ValueError):
        synthesize_anechoic(sc, short_signal, FS, attenuation="cubic")


def test_inverse_distance_attenuation(short_signal):
    sc = _scenario([[0.5, 0, 0], [2.0, 0, 0]], [[0, 0, 0]], [0, 1.0, 0], 0.0)
    rec = synthesize_anechoic(sc, short_signal, FS, attenuation="inverse-distance")
    ratio = np.max(np.abs(rec.channels[0])) / np.max(np.abs(rec.channels[1]))
    assert ratio == pytest.approx(4.0, rel=0.05)


def test_fractional_delay_integer_case():
    x = np.random.default_rng(1).standard_normal(256)
    np.testing.assert_allclose(fractional_delay(x, 5.0), np.roll(x, 5), atol=1e-12)


# ---------------------------------------------------------------- GCC-PHAT


@pytest.mark.parametrize("shift", [10, 0, -7])
def test_gcc_phat_finds_shift(shift):
    x = np.random.default_rng(2).standard_normal(4096)
    y = np.roll(x, shift)
    corr = gcc_phat(x, y, 50)
    assert np.argmax(corr) - 50 == shift
    # direct time-domain oracle agrees on the lag
    direct = [np.dot(x, np.roll(y, -l)) for l in range(-50, 51)]
    assert np.argmax(direct) - 50 == shift


def test_gcc_phat_swap_symmetry():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(2000), rng.standard_normal(2000)
    a = gcc_phat(x, y, 100)
    b = gcc_phat(y, x, 100)
    np.testing.assert_allclose(a, b[::-1], atol=1e-10)


def test_gcc_phat_length_errors():
    with pytest.raises(ValueError):
        gcc_phat(np.zeros(100), np.zeros(99), 10)
    with pytest.raises(ValueError):
        gcc_phat(np.zeros(100), np.zeros(100), 60)


def test_gcc_phat_silent_input_is_zero():
    assert not gcc_phat(np.zeros(64), np.zeros(64), 8).any()


def test_independent_noise_has_no_dominant_peak():
    rng = np.random.default_rng(4)
    q = [peak_quality(gcc_phat(rng.standard_normal(4096), rng.standard_normal(4096), 200)) for _ in range(100)]
    assert 1.0 <= np.median(q) < 1.3


def test_quadratic_interp_examples():
    assert quadratic_interp(0.5, 1.0, 0.5) == 0.0
    assert quadratic_interp(0.5, 1.0, 0.9) == pytest.approx(1 / 3, abs=1e-12)


def test_quadratic_interp_exact_on_parabola():
    vertex = 0.2371
    f = lambda x: 3.0 - 2.0 * (x - vertex) ** 2  # noqa: E731
    assert quadratic_interp(f(-1), f(0), f(1)) == pytest.approx(vertex, rel=1e-12)


def test_quadratic_interp_errors():
    with pytest.raises(FlatPeakError):
        quadratic_interp(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        quadratic_interp(2.0, 1.0, 0.0)


def test_refine_peak_falls_back_on_edges():
    assert refine_peak(np.array([3.0, 1.0, 0.0])) == 0.0


def test_interp_stays_inside_unit_interval():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        c0 = rng.uniform(0.5, 1)
        cm, cp = rng.uniform(0, c0, 2)
        assert -1 < quadratic_interp(cm, c0, cp) < 1


# ---------------------------------------------------------------- TDOA estimation


def test_pure_offset_recovered(short_signal):
    p = np.array([0.1, 0.2, 0.3])
    sc = _scenario([p, p], [[1.0, 0, 0], [0, 1.0, 0]], p, 0.5)
    rec = synthesize_anechoic(sc, short_signal, FS, max_offset=1.0)
    tdoa = estimate_tdoas(rec, sc.sensors, sc.emitters, C, TdoaOptions(max_offset=1.0))
    np.testing.assert_allclose(tdoa.values, 0.5, atol=1 / FS)
    assert not tdoa.flagged.any()
    assert abs(tdoa[0, 1].value) <= tdoa[0, 1].search_window


def test_round_trip_error_below_one_sample():
    rng = np.random.default_rng(6)
    sc = Scenario(rng.uniform(-1, 1, (4, 3)) * 0.6, rng.uniform(-1, 1, (6, 3)) * 0.6, np.array([0.2, -0.1, 0.1]), 0.73)
    sig = white_noise(0.2, FS, rng)
    rec = synthesize_anechoic(sc, sig, FS, max_offset=1.0)
    tdoa = estimate_tdoas(rec, sc.sensors, sc.emitters, C, TdoaOptions(max_offset=1.0))
    assert np.max(np.abs(tdoa.values - true_tdoas(sc))) < 1 / FS
    meas = tdoa.to_measurements(sc.emitters, sc.sensors, C)
    assert meas.r_tilde.shape == (4, 6)


def test_search_window_too_large_for_slot(short_signal):
    sc = _scenario([[0.5, 0, 0]], [[0, 0, 0]], [0, 0.5, 0], 0.0)
    rec = synthesize_anechoic(sc, short_signal, FS, max_offset=0.0)
    with pytest.raises(DurationTooShortError):
        estimate_tdoas(rec, sc.sensors, sc.emitters, C, TdoaOptions(max_offset=5.0))


def test_noise_only_channel_is_flagged(short_signal):
    sc = _scenario([[0.5, 0, 0]], [[0, 0, 0], [0, 0.4, 0]], [0, 0.5, 0], 0.0)
    rec = synthesize_anechoic(sc, short_signal, FS, max_offset=0.01)
    rec.channels[0] = np.random.default_rng(9).standard_normal(rec.channels.shape[1])
    tdoa = estimate_tdoas(rec, sc.sensors, sc.emitters, C, TdoaOptions(max_offset=0.01, min_peak_quality=2.0))
    assert tdoa.flagged[0].all()


# ---------------------------------------------------------------- files


def test_wav_round_trip(tmp_path, short_signal):
    sc = _scenario([[0.5, 0, 0], [0, 0.5, 0]], [[0, 0, 0]], [0, 0, 0.5], 0.001)
    rec = synthesize_anechoic(sc, short_signal, FS)
    write_wav(tmp_path / "rec.wav", rec)
    rate, data = read_wav(tmp_path / "rec.wav")
    assert rate == FS
    np.testing.assert_allclose(data, rec.channels.astype(np.float32), rtol=0, atol=0)


def test_rir_filenames():
    assert rir_filename(3, 7) == "rir_e03_s07.wav"
    assert rir_filename(0, None) == "rir_e00_new.wav"


def test_rir_hook_with_delta_responses_matches_anechoic(tmp_path):
    from scipy.io import wavfile

    k = [12, 30]
    sc = _scenario([[k[0] * C / FS, 0, 0]], [[0, 0, 0]], [k[1] * C / FS, 0, 0], 0.0)
    for i, delay in zip([0, None], k):
        h = np.zeros(64, np.float32)
        h[delay] = 1.0
        wavfile.write(str(tmp_path / rir_filename(0, i)), int(FS), h)
    rirs = load_impulse_responses(tmp_path, 1, 1)
    assert rirs.shape == (1, 2, 64)
    sig = white_noise(0.02, FS, np.random.default_rng(0))
    rec = synthesize_with_rirs(sc, sig, FS, rirs, max_offset=0.0)
    tdoa = estimate_tdoas(rec, sc.sensors, sc.emitters, C, TdoaOptions(max_offset=0.0))
    assert tdoa.values[0, 0] == pytest.approx((k[0] - k[1]) / FS, abs=1e-9)
