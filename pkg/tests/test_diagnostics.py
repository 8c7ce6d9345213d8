import numpy as np
import pytest

from sfnn.data import split_chronological
from sfnn.diagnostics import (
    CurvePoint,
    TRACE_CRITICAL_95,
    compute_diagnostics,
    johansen_curve,
    johansen_trace,
    recommend_modules,
    scale_difference,
    trend_strength,
)
from sfnn.errors import NotPositiveDefinite, SingleSeries, TooShort

from conftest import make_dataset


def brute_force_trend(values, lookback):
    t, n = values.shape
    total = 0.0
    count = 0
    for start in range(t - lookback + 1):
        acc = 0.0
        for i in range(n):
            mean = 0.0
            for row in range(start, start + lookback):
                mean += values[row, i]
            mean /= lookback
            acc += mean * mean
        total += acc / n
        count += 1
    return total / count


def brute_force_scale(values, lookback):
    t, n = values.shape
    total = 0.0
    count = 0
    for start in range(t - lookback + 1):
        means = []
        for i in range(n):
            mean = 0.0
            for row in range(start, start + lookback):
                mean += values[row, i]
            means.append(mean / lookback)
        mu = sum(means) / n
        var = sum((m - mu) ** 2 for m in means) / n
        total += var**0.5
        count += 1
    return total / count


class TestTrendStrength:
    def test_zero_mean_windows(self):
        # alternating +/-1 with even window length: every window mean is 0
        values = np.tile([1.0, -1.0], 50)[:, None]
        assert trend_strength(values, 4) == 0.0

    def test_constant_value(self):
        values = np.full((40, 3), 2.5)
        assert abs(trend_strength(values, 8) - 2.5**2) < 1e-12

    def test_iid_normal_close_to_one_over_l(self):
        rng = np.random.default_rng(0)
        lookback = 100
        values = rng.standard_normal((4000, 50))
        stat = trend_strength(values, lookback)
        # independent Monte Carlo estimate from non-overlapping windows
        blocks = values[: (4000 // lookback) * lookback].reshape(-1, lookback, 50)
        mc = (blocks.mean(axis=1) ** 2).mean()
        se = (blocks.mean(axis=1) ** 2).std() / np.sqrt(blocks.shape[0] * 50)
        assert abs(stat - 1.0 / lookback) < 3 * se + 0.002
        assert abs(mc - 1.0 / lookback) < 3 * se + 0.002

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(1)
        values = rng.standard_normal((40, 3))
        assert abs(trend_strength(values, 7) - brute_force_trend(values, 7)) < 1e-10

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal((60, 5))
        perm = rng.permutation(5)
        assert abs(trend_strength(values, 6) - trend_strength(values[:, perm], 6)) < 1e-12

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((60, 4))
        base = trend_strength(values, 9)
        assert abs(trend_strength(values * 3.0, 9) - 9.0 * base) < 1e-9

    def test_too_short(self):
        with pytest.raises(TooShort):
            trend_strength(np.zeros((5, 2)), 10)

    def test_accepts_dataset_and_uses_train_segment(self):
        rng = np.random.default_rng(4)
        raw = rng.standard_normal(200) + np.linspace(0, 5, 200)
        ds = make_dataset(raw)
        train, _, _ = split_chronological(ds)
        assert trend_strength(ds, 16) == trend_strength(train.data, 16)


class TestScaleDifference:
    def test_identical_series(self):
        rng = np.random.default_rng(5)
        col = rng.standard_normal(80)
        values = np.column_stack([col, col, col])
        assert scale_difference(values, 8) < 1e-12

    def test_two_constant_series_at_plus_minus_one(self):
        values = np.column_stack([np.ones(50), -np.ones(50)])
        assert abs(scale_difference(values, 10) - 1.0) < 1e-12

    def test_iid_noise_close_to_inverse_sqrt_l(self):
        rng = np.random.default_rng(6)
        lookback = 64
        values = rng.standard_normal((3000, 200))
        stat = scale_difference(values, lookback)
        assert abs(stat - 1.0 / np.sqrt(lookback)) / (1.0 / np.sqrt(lookback)) < 0.1

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(7)
        values = rng.standard_normal((35, 4))
        assert abs(scale_difference(values, 6) - brute_force_scale(values, 6)) < 1e-10

    def test_single_series_rejected(self):
        with pytest.raises(SingleSeries):
            scale_difference(np.zeros((30, 1)), 5)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        values = rng.standard_normal((50, 6))
        perm = rng.permutation(6)
        assert abs(scale_difference(values, 5) - scale_difference(values[:, perm], 5)) < 1e-12


def cointegrated_pair(seed, length=800, drift=0.1, noise=0.1):
    rng = np.random.default_rng(seed)
    x = np.cumsum(drift + rng.standard_normal(length))
    y = x + noise * rng.standard_normal(length)
    return np.column_stack([x, y])


def independent_walks(seed, length=800, drift=0.1):
    rng = np.random.default_rng(seed)
    a = np.cumsum(drift + rng.standard_normal(length))
    b = np.cumsum(-drift + rng.standard_normal(length))
    return np.column_stack([a, b])


class TestJohansen:
    def test_matches_statsmodels_eigenvalues_and_statistic(self):
        from statsmodels.tsa.vector_ar.vecm import coint_johansen

        for seed in range(5):
            data = cointegrated_pair(seed, length=300)
            mine = johansen_trace(data, lags=2, rank=1)
            ref = coint_johansen(data, det_order=0, k_ar_diff=2)
            assert np.abs(np.sort(mine.eigenvalues) - np.sort(ref.eig)).max() < 1e-8
            # rank-1 rejection statistic equals the full trace statistic
            assert abs(mine.statistic - ref.lr1[0]) < 1e-6
            assert abs(mine.critical_value_95 - ref.cvt[0, 1]) < 1e-9

    def test_cointegrated_pair_rejects(self):
        rejections = sum(
            johansen_trace(cointegrated_pair(seed), lags=2, rank=1).reject for seed in range(100)
        )
        assert rejections >= 95

    def test_independent_walks_rarely_reject(self):
        rejections = sum(
            johansen_trace(independent_walks(seed), lags=2, rank=1).reject
            for seed in range(100)
        )
        assert rejections <= 10

    def test_stationary_noise_rejects_at_full_rank(self):
        rng = np.random.default_rng(9)
        data = rng.standard_normal((500, 3))
        res = johansen_trace(data, lags=2, rank=2)
        assert res.reject
        assert min(res.eigenvalues) > 0.05  # all directions mean-revert

    def test_eigenvalues_in_unit_interval(self):
        for seed in range(5):
            res = johansen_trace(independent_walks(seed, length=300), lags=3, rank=1)
            assert all(0.0 <= v < 1.0 for v in res.eigenvalues)

    def test_t_effective(self):
        data = independent_walks(0, length=200)
        res = johansen_trace(data, lags=4, rank=1)
        assert res.t_effective == 200 - 4 - 1

    def test_too_short(self):
        with pytest.raises(TooShort):
            johansen_trace(np.zeros((20, 2)), lags=5)

    def test_collinear_series(self):
        rng = np.random.default_rng(10)
        x = np.cumsum(rng.standard_normal(300))
        data = np.column_stack([x, 2.0 * x])  # exactly collinear
        with pytest.raises(NotPositiveDefinite):
            johansen_trace(data, lags=2)

    def test_single_series_rejected(self):
        with pytest.raises(SingleSeries):
            johansen_trace(np.zeros((100, 1)), lags=1)

    def test_critical_value_table_monotone(self):
        assert all(b > a for a, b in zip(TRACE_CRITICAL_95, TRACE_CRITICAL_95[1:]))


class TestJohansenCurve:
    def test_strong_cointegration_stays_above_critical(self):
        data = cointegrated_pair(3, length=1200)
        curve = johansen_curve(data, lags=[1, 2, 4, 8, 16])
        assert all(p.reject for p in curve)

    def test_independent_walks_below_critical_at_long_lags(self):
        data = independent_walks(4, length=1200)
        curve = johansen_curve(data, lags=[4, 8, 16])
        assert sum(bool(p.reject) for p in curve) <= 1

    def test_single_lag_equals_trace(self):
        data = cointegrated_pair(5, length=400)
        (point,) = johansen_curve(data, lags=[2])
        res = johansen_trace(data, lags=2)
        assert point.statistic == res.statistic
        assert point.reject == res.reject

    def test_per_lag_errors_recorded(self):
        data = independent_walks(6, length=60)
        curve = johansen_curve(data, lags=[1, 500])
        assert curve[0].error is None
        assert curve[1].error is not None and curve[1].statistic is None


def reject_point(lag=8, reject=True):
    return CurvePoint(lag=lag, statistic=100.0 if reject else 1.0, critical_value_95=15.5, reject=reject)


class TestRecommendations:
    def test_trend_and_small_n(self):
        recs = recommend_modules(trend=0.3, scale=0.1, n_series=7)
        assert recs.modules == {"mean_centering", "series_mixing"}
        assert "0.3" in recs.rationales["mean_centering"]

    def test_large_n_scale_only(self):
        recs = recommend_modules(trend=0.05, scale=0.9, n_series=862)
        assert recs.modules == {"layer_norm"}

    def test_small_n_only_rule(self):
        recs = recommend_modules(trend=0.0, scale=0.0, n_series=2)
        assert recs.modules == {"series_mixing"}

    def test_thresholds_are_strict(self):
        assert "mean_centering" not in recommend_modules(0.2, 0.0, 100).modules
        assert "mean_centering" in recommend_modules(0.2000001, 0.0, 100).modules
        assert "layer_norm" not in recommend_modules(0.0, 0.5, 100).modules
        assert "layer_norm" in recommend_modules(0.0, 0.5000001, 100).modules

    def test_mid_n_requires_persistent_cointegration(self):
        curve_yes = [reject_point(2), reject_point(16, True)]
        curve_no = [reject_point(2), reject_point(16, False)]
        assert "series_mixing" in recommend_modules(0.0, 0.0, 50, curve_yes).modules
        assert "series_mixing" not in recommend_modules(0.0, 0.0, 50, curve_no).modules
        # above the upper bound mixing is never recommended
        assert "series_mixing" not in recommend_modules(0.0, 0.0, 137, curve_yes).modules

    def test_monotone_in_trend(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            low = rng.uniform(0, 1)
            high = low + rng.uniform(0, 1)
            scale = rng.uniform(0, 1)
            n = int(rng.integers(2, 200))
            if "mean_centering" in recommend_modules(low, scale, n).modules:
                assert "mean_centering" in recommend_modules(high, scale, n).modules

    def test_single_series_never_mixes(self):
        assert "series_mixing" not in recommend_modules(0.0, None, 1).modules

    def test_heuristic_note_present(self):
        assert "guideline" in recommend_modules(0.3, 0.1, 7).note


class TestMidSizedSystems:
    def test_thirty_cointegrated_series_recommend_mixing(self):
        # one common stochastic trend shared by all 30 series
        rng = np.random.default_rng(1)
        trend = np.cumsum(0.05 + rng.standard_normal(2500))
        data = trend[:, None] + 0.3 * rng.standard_normal((2500, 30))
        report = compute_diagnostics(make_dataset(data), lookback=32, lags=(1, 2, 4, 8))
        assert report.johansen_curve[-1].reject
        assert "series_mixing" in report.recommendations.modules
        assert "lag 8" in report.recommendations.rationales["series_mixing"]

    def test_thirty_independent_walks_do_not_recommend_mixing(self):
        rng = np.random.default_rng(2)
        data = np.cumsum(0.05 + rng.standard_normal((2500, 30)), axis=0)
        report = compute_diagnostics(make_dataset(data), lookback=32, lags=(1, 2, 4, 8))
        assert not any(p.reject for p in report.johansen_curve)
        assert "series_mixing" not in report.recommendations.modules


class TestComputeDiagnostics:
    def test_full_report_on_cointegrated_data(self):
        data = cointegrated_pair(7, length=900)
        ds = make_dataset(data)
        report = compute_diagnostics(ds, lookback=16, lags=(1, 2, 4))
        assert report.n_series == 2
        assert "series_mixing" in report.recommendations.modules
        payload = report.to_dict()
        assert payload["recommended_modules"]
        assert "series_mixing" in report.to_text()

    def test_single_series_notes(self):
        rng = np.random.default_rng(12)
        ds = make_dataset(rng.standard_normal(300))
        report = compute_diagnostics(ds, lookback=8)
        assert report.scale_difference is None
        assert report.johansen_curve == []
        assert any("single series" in n for n in report.notes)
        assert "series_mixing" not in report.recommendations.modules

    def test_json_serializes(self):
        import json

        rng = np.random.default_rng(13)
        ds = make_dataset(rng.standard_normal((400, 2)))
        report = compute_diagnostics(ds, lookback=8, lags=(1, 2))
        parsed = json.loads(report.to_json())
        assert parsed["n_series"] == 2
