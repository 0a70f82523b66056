import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dngpa.signal import (
    N_CHANNELS,
    RegionSpec,
    ScalerStats,
    SignalError,
    clean_sample,
    extract_window,
    lulu_lower,
    lulu_smooth,
    lulu_upper,
)


def lower_reference(x, n):
    """Max over windows of the window minimum, windows clipped at the ends."""
    N = len(x)
    out = np.empty(N)
    for i in range(N):
        best = -np.inf
        for j in range(i - n, i + 1):
            lo, hi = max(j, 0), min(j + n, N - 1)
            best = max(best, min(x[lo : hi + 1]))
        out[i] = best
    return out


def upper_reference(x, n):
    N = len(x)
    out = np.empty(N)
    for i in range(N):
        best = np.inf
        for j in range(i - n, i + 1):
            lo, hi = max(j, 0), min(j + n, N - 1)
            best = min(best, max(x[lo : hi + 1]))
        out[i] = best
    return out


series = hnp.arrays(np.float64, st.integers(7, 60), elements=st.floats(-1e3, 1e3, allow_nan=False))


class TestLulu:
    def test_spike_removed(self):
        np.testing.assert_array_equal(lulu_smooth([0, 0, 10, 0, 0], 1), np.zeros(5))

    def test_negative_spike_removed(self):
        np.testing.assert_array_equal(lulu_smooth([0, 0, -10, 0, 0], 1), np.zeros(5))

    def test_width_two_pulse_survives_n1(self):
        x = np.array([0, 0, 5, 5, 0, 0], dtype=float)
        np.testing.assert_array_equal(lulu_smooth(x, 1), x)

    def test_width_two_pulse_removed_n2(self):
        x = np.array([0, 0, 0, 5, 5, 0, 0, 0], dtype=float)
        np.testing.assert_array_equal(lulu_smooth(x, 2), np.zeros(8))

    @settings(max_examples=60, deadline=None)
    @given(x=series, n=st.integers(1, 3))
    def test_matches_direct_definition(self, x, n):
        np.testing.assert_array_equal(lulu_lower(x, n), lower_reference(x, n))
        np.testing.assert_array_equal(lulu_upper(x, n), upper_reference(x, n))
        np.testing.assert_array_equal(lulu_smooth(x, n), upper_reference(lower_reference(x, n), n))

    @settings(max_examples=60, deadline=None)
    @given(x=series, n=st.integers(1, 3))
    def test_idempotent(self, x, n):
        once = lulu_smooth(x, n)
        np.testing.assert_array_equal(lulu_smooth(once, n), once)

    @settings(max_examples=40, deadline=None)
    @given(x=series, n=st.integers(1, 3))
    def test_monotone_series_fixed(self, x, n):
        inc = np.sort(x)
        np.testing.assert_array_equal(lulu_smooth(inc, n), inc)
        np.testing.assert_array_equal(lulu_smooth(inc[::-1], n), inc[::-1])

    @settings(max_examples=40, deadline=None)
    @given(x=series, n=st.integers(1, 3))
    def test_lower_below_upper_above(self, x, n):
        assert np.all(lulu_lower(x, n) <= x)
        assert np.all(lulu_upper(x, n) >= x)

    def test_batched_along_last_axis(self):
        x = np.random.default_rng(0).standard_normal((3, 50))
        out = lulu_smooth(x, 1)
        for row, o in zip(x, out):
            np.testing.assert_array_equal(o, lulu_smooth(row, 1))

    def test_too_short(self):
        with pytest.raises(SignalError):
            lulu_smooth([1.0, 2.0], 1)
        with pytest.raises(SignalError):
            lulu_smooth(np.zeros(10), 0)


class TestCleanSample:
    def test_voltage_channel_untouched(self):
        x = np.random.default_rng(1).standard_normal((N_CHANNELS, 40))
        out = clean_sample(x, 1)
        np.testing.assert_array_equal(out[0], x[0])
        np.testing.assert_array_equal(out[1:], lulu_smooth(x[1:], 1))

    def test_wrong_channel_count(self):
        with pytest.raises(SignalError):
            clean_sample(np.zeros((6, 40)))


class TestRegion:
    def test_default_width(self):
        r = RegionSpec()
        assert r.n_features() == 7000
        assert r.window == slice(2260, 3260)

    def test_extract_window_concatenates_channels(self):
        x = np.arange(N_CHANNELS * 4000, dtype=float).reshape(N_CHANNELS, 4000)
        f = extract_window(x)
        assert f.shape == (7000,)
        np.testing.assert_array_equal(f[:1000], x[0, 2260:3260])
        np.testing.assert_array_equal(f[-1000:], x[6, 2260:3260])

    def test_short_trace(self):
        with pytest.raises(SignalError):
            extract_window(np.zeros((N_CHANNELS, 3000)))

    def test_invalid_region(self):
        with pytest.raises(SignalError):
            RegionSpec(boot_end=100, stable_end=50)
        with pytest.raises(SignalError):
            RegionSpec(window_len=5000)


class TestScaler:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(5, 3, (30, 8)), rng.normal(3000, 300, (30, 3))
        s = ScalerStats.fit(x, y)
        np.testing.assert_allclose(s.inverse_features(s.transform_features(x)), x, rtol=1e-12)
        np.testing.assert_allclose(s.inverse_labels(s.transform_labels(y)), y, rtol=1e-12)
        z = s.transform_features(x)
        np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1, rtol=1e-12)

    def test_constant_feature_uses_floor(self):
        x = np.ones((5, 2))
        s = ScalerStats.fit(x, np.arange(15.0).reshape(5, 3))
        assert np.all(np.isfinite(s.transform_features(x)))

    def test_sigma_scales_by_label_std(self):
        y = np.array([[0.0, 0, 0], [2.0, 4, 6]])
        s = ScalerStats.fit(np.zeros((2, 1)) + [[0], [1]], y)
        np.testing.assert_allclose(s.inverse_sigma(np.ones(3)), [1.0, 2.0, 3.0])

    def test_dict_round_trip_is_exact(self):
        rng = np.random.default_rng(3)
        s = ScalerStats.fit(rng.standard_normal((10, 4)), rng.standard_normal((10, 3)))
        t = ScalerStats.from_dict(s.to_dict())
        for k in ("feature_mean", "feature_std", "label_mean", "label_std"):
            assert np.array_equal(getattr(s, k), getattr(t, k))
