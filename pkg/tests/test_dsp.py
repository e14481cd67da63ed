import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vadosd.dsp import (
    FrontendConfig,
    filter_centers,
    frame_signal,
    log_mel,
    logmel_features,
    mel_filterbank,
    mvn,
    mvn_stats,
    num_stft_frames,
    stft,
)

CFG = FrontendConfig()


def test_two_seconds_gives_200_frames():
    assert stft(np.zeros(32000)).shape == (1, 200, 257)


def test_zero_input_zero_spectrum():
    assert not np.any(stft(np.zeros((2, 1000))))


def test_tone_peaks_at_expected_bin():
    t = np.arange(32000) / 16000
    spec = np.abs(stft(np.sin(2 * np.pi * 1000 * t)))[0]
    full = (np.arange(200) * 160 + 400) <= 32000
    assert np.all(np.argmax(spec[full], axis=1) == round(1000 * 512 / 16000))


@given(st.integers(1, 3000))
def test_framing_matches_naive_loop(n):
    x = np.random.default_rng(n).standard_normal(n)
    frames = frame_signal(x)
    T = math.ceil(n / 160)
    assert frames.shape == (T, 400) and num_stft_frames(n) == T
    padded = np.zeros(T * 160 + 400)
    padded[:n] = x
    for t in range(T):
        np.testing.assert_array_equal(frames[t], padded[t * 160 : t * 160 + 400])


def test_stft_linearity():
    x = np.random.default_rng(0).standard_normal(4000)
    a, b = stft(x), stft(3.5 * x)
    np.testing.assert_allclose(b, 3.5 * a, rtol=1e-5, atol=1e-4)


def test_filterbank_shape_support_order():
    fb = mel_filterbank()
    assert fb.shape == (64, 257) and np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)
    peaks = np.argmax(fb, axis=1)
    assert np.all(np.diff(filter_centers()) > 0)
    assert np.all(np.diff(peaks) >= 0)
    covered = fb[:, 1:256].sum(axis=0)
    assert np.all(covered > 0)


def test_tone_at_filter_center_excites_that_filter():
    fb = mel_filterbank()
    t = np.arange(16000) / 16000
    for k, fc in enumerate(filter_centers()):
        spec = np.abs(stft(np.sin(2 * np.pi * fc * t)))[0, 5:-5]
        resp = (spec**2 @ fb.T).mean(axis=0)
        assert np.argmax(resp) == k, (k, fc)


def test_log_mel_floor_and_scaling():
    assert np.allclose(log_mel(np.zeros((3, 257))), math.log(CFG.log_floor))
    mag = np.random.default_rng(1).uniform(1, 2, (200, 257))
    diff = log_mel(10 * mag) - log_mel(mag)
    assert diff.shape == (200, 64)
    np.testing.assert_allclose(diff, math.log(100), atol=1e-4)


def test_logmel_uses_channel_mean():
    x = np.random.default_rng(2).standard_normal((3, 3200)).astype(np.float32)
    np.testing.assert_allclose(logmel_features(x), log_mel(np.abs(stft(x.mean(axis=0)))[0]), rtol=1e-6)


@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 6)), elements=st.floats(-1e3, 1e3)))
def test_mvn_properties(x):
    y = mvn(x)
    assert np.all(np.abs(y.mean(axis=0)) < 1e-6)
    v = y.var(axis=0)
    assert np.all((np.abs(v - 1) < 1e-4) | (np.abs(v) < 1e-12))
    np.testing.assert_allclose(mvn(y), y, atol=1e-6)


def test_mvn_constant_dimension_maps_to_zero():
    x = np.column_stack([np.full(10, 4.0), np.arange(10.0)])
    assert np.all(mvn(x)[:, 0] == 0)


def test_mvn_needs_two_frames():
    with pytest.raises(ValueError):
        mvn_stats(np.ones((1, 3)))
