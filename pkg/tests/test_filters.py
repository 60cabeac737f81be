from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import bin_mean_oracle, brute_force_moving_average, qp_difference_l1_oracle
from ridekit.signal import (
    EmptySeries,
    NonUniformSpacing,
    Series,
    difference_l1_objective,
    l1_trend_filter,
    moving_average,
    resample_to_1hz,
    tv_denoise,
)


def series(t, v):
    return Series(np.asarray(t, dtype=float), np.asarray(v, dtype=float))


class TestMovingAverage:
    def test_constant_series_unchanged(self):
        s = series(np.arange(0, 5, 0.1), np.full(50, 3.0))
        out = moving_average(s, 1.0)
        assert np.array_equal(out.v, s.v)
        assert np.array_equal(out.t, s.t)

    def test_default_window_spans_11_samples_at_10hz(self):
        # an impulse spreads over exactly the 11 samples within +/- 0.5 s
        t = np.arange(0, 5, 0.1)
        v = np.zeros(50)
        v[25] = 1.0
        out = moving_average(series(t, v), 1.0)
        touched = np.flatnonzero(out.v > 0)
        assert len(touched) == 11
        assert np.allclose(out.v[touched], 1.0 / 11.0)

    def test_matches_brute_force_on_random_series(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(5, 60))
            t = np.sort(rng.uniform(0, 30, n))
            t = np.unique(t)
            v = rng.normal(0, 2, len(t))
            out = moving_average(series(t, v), 0.5)
            assert np.max(np.abs(out.v - brute_force_moving_average(t, v, 0.5))) < 1e-12

    def test_empty_series_raises(self):
        with pytest.raises(EmptySeries):
            moving_average(Series(np.empty(0), np.empty(0)), 1.0)

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=40),
        st.floats(0.1, 5.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_output_within_input_range(self, values, window):
        t = np.arange(len(values), dtype=float)
        v = np.asarray(values)
        out = moving_average(series(t, v), window)
        assert out.v.min() >= v.min() - 1e-12
        assert out.v.max() <= v.max() + 1e-12


class TestTrendFilter:
    def test_lambda_zero_is_identity(self):
        rng = np.random.default_rng(0)
        v = rng.normal(0, 1, 25)
        out = l1_trend_filter(series(np.arange(25), v), 0.0)
        assert np.max(np.abs(out.v - v)) < 1e-9

    def test_huge_lambda_gives_affine_fit(self):
        rng = np.random.default_rng(1)
        t = np.arange(20.0)
        v = rng.normal(0, 1, 20) + 0.3 * t
        out = l1_trend_filter(series(t, v), 1e9)
        design = np.vstack([np.ones(20), t]).T
        coef, *_ = np.linalg.lstsq(design, v, rcond=None)
        assert np.max(np.abs(out.v - design @ coef)) < 1e-6
        assert np.max(np.abs(np.diff(out.v, n=2))) < 1e-9

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            v = rng.normal(0, 1, 8)
            out = l1_trend_filter(series(np.arange(8), v), 1.0)
            x_star, _ = qp_difference_l1_oracle(v, 1.0, order=2)
            assert np.max(np.abs(out.v - x_star)) < 1e-5

    def test_objective_no_worse_than_input(self):
        rng = np.random.default_rng(3)
        for lam in (0.1, 1.0, 10.0):
            v = rng.normal(0, 3, 40)
            out = l1_trend_filter(series(np.arange(40), v), lam)
            assert (
                difference_l1_objective(v, out.v, lam, 2)
                <= difference_l1_objective(v, v, lam, 2) + 1e-9
            )

    def test_bounded_range_on_smooth_fixtures(self):
        # kinematics-like inputs stay within the data range (with slack)
        t = np.arange(0, 30, 0.1)
        v = 10 * np.sin(t / 5.0) + np.random.default_rng(5).normal(0, 0.3, len(t))
        out = l1_trend_filter(series(t, v), 50.0)
        assert out.v.min() >= v.min() - 1e-9
        assert out.v.max() <= v.max() + 1e-9

    def test_nonuniform_spacing_rejected(self):
        t = np.array([0.0, 1.0, 2.5, 3.0])
        with pytest.raises(NonUniformSpacing):
            l1_trend_filter(series(t, np.zeros(4)), 1.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(Exception):
            l1_trend_filter(series(np.arange(5), np.zeros(5)), -1.0)


class TestTvDenoise:
    def test_lambda_zero_is_identity(self):
        rng = np.random.default_rng(2)
        v = rng.normal(0, 1, 25)
        out = tv_denoise(series(np.arange(25), v), 0.0)
        assert np.max(np.abs(out.v - v)) < 1e-9

    def test_step_preserved_plateaus_flat(self):
        m = 3
        v = np.concatenate([np.zeros(m), np.ones(m)])
        out = tv_denoise(series(np.arange(2 * m), v), 0.1)
        # analytic solution: plateaus at lam/m and 1 - lam/m
        assert np.max(np.abs(out.v[:m] - 0.1 / m)) < 1e-5
        assert np.max(np.abs(out.v[m:] - (1 - 0.1 / m))) < 1e-5
        assert np.ptp(out.v[:m]) < 1e-5
        assert np.ptp(out.v[m:]) < 1e-5

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            v = rng.normal(0, 1, 8)
            out = tv_denoise(series(np.arange(8), v), 0.5)
            x_star, _ = qp_difference_l1_oracle(v, 0.5, order=1)
            assert np.max(np.abs(out.v - x_star)) < 1e-5

    def test_total_variation_never_increases(self):
        rng = np.random.default_rng(9)
        for lam in (0.05, 0.5, 5.0):
            v = rng.normal(0, 1, 30)
            out = tv_denoise(series(np.arange(30), v), lam)
            assert np.sum(np.abs(np.diff(out.v))) <= np.sum(np.abs(np.diff(v))) + 1e-9

    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=25), st.floats(0.01, 10.0))
    @settings(max_examples=60, deadline=None)
    def test_output_within_input_range(self, values, lam):
        v = np.asarray(values)
        out = tv_denoise(series(np.arange(len(v)), v), lam)
        assert out.v.min() >= v.min() - 1e-9
        assert out.v.max() <= v.max() + 1e-9


class TestResample:
    def test_constant_10hz_to_1hz(self):
        t = np.arange(0, 60, 0.1)
        out = resample_to_1hz(series(t, np.full(len(t), 4.0)))
        assert np.array_equal(out.t, np.arange(60.0))
        assert np.allclose(out.v, 4.0)
        assert not out.gap.any()

    def test_600_samples_become_60_outputs(self):
        t = np.arange(600) / 10.0
        out = resample_to_1hz(series(t, np.ones(600)))
        assert len(out) == 60

    def test_ramp_matches_bin_mean_oracle(self):
        t = np.arange(600) / 10.0
        v = t.copy()
        out = resample_to_1hz(series(t, v))
        ks, means = bin_mean_oracle(t, v)
        assert np.array_equal(out.t, ks.astype(float))
        for i, m in enumerate(means):
            assert m is not None
            assert abs(out.v[i] - m) < 1e-9

    def test_gap_seconds_marked(self):
        t = np.concatenate([np.arange(0, 2, 0.1), np.arange(4, 6, 0.1)])
        out = resample_to_1hz(series(t, np.ones(len(t))))
        assert out.gap.sum() >= 1
        assert np.all(out.v[out.gap] == 0.0)
        assert np.all(np.isfinite(out.v))

    def test_empty_raises(self):
        with pytest.raises(EmptySeries):
            resample_to_1hz(Series(np.empty(0), np.empty(0)))
