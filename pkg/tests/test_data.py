import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfnn.data import (
    Segment,
    SplitSpec,
    kfold_oos_splits,
    load_csv,
    make_windows,
    split_chronological,
    zscore_fit_transform,
)
from sfnn.errors import (
    DegenerateSeries,
    EmptyFile,
    NonNumericCell,
    ParseError,
    RaggedRows,
    TooShort,
)

from conftest import make_dataset, make_table


class TestLoadCsv:
    def test_shape_contract(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n3,4\n5,6\n")
        table = load_csv(path)
        assert table.n_rows == 3 and table.n_series == 2
        assert table.names == ("a", "b")
        assert table.timestamps is None

    def test_date_column_excluded(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n")
        table = load_csv(path)
        assert table.n_series == 2
        assert table.timestamps == ("2020-01-01", "2020-01-02")

    def test_non_numeric_cell_cites_row(self, tmp_path):
        path = tmp_path / "data.csv"
        # file line 5 holds the bad cell (header is line 1)
        path.write_text("a\n1\n2\n3\nabc\n4\n")
        with pytest.raises(NonNumericCell) as err:
            load_csv(path)
        assert "row 5" in str(err.value)
        assert isinstance(err.value, ParseError)
        assert err.value.row == 5

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("")
        with pytest.raises(EmptyFile):
            load_csv(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n")
        with pytest.raises(EmptyFile):
            load_csv(path)

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(RaggedRows) as err:
            load_csv(path)
        assert err.value.row == 3

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a\n1\nnan\n")
        with pytest.raises(NonNumericCell):
            load_csv(path)

    def test_unsorted_timestamps_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("date,a\n2020-01-02,1\n2020-01-01,2\n")
        with pytest.raises(ParseError):
            load_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv")


class TestSplitSpec:
    def test_from_string_ratio(self):
        split = SplitSpec.from_string("6:2:2")
        assert abs(split.train_fraction - 0.6) < 1e-12
        assert abs(split.val_fraction - 0.2) < 1e-12

    def test_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.2, 0.2)

    def test_all_positive(self):
        with pytest.raises(ValueError):
            SplitSpec(0.8, 0.0, 0.2)


class TestZScore:
    def test_hand_computed_population_std(self):
        # train [1, 2, 3]: mean 2, population std sqrt(2/3)
        values = np.array([1.0, 2.0, 3.0, 4.0, 5.0])[:, None]
        ds = zscore_fit_transform(make_table(values), SplitSpec.from_string("3:1:1"))
        std = np.sqrt(2.0 / 3.0)
        expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / std
        assert np.abs(ds.values[:3, 0] - expected).max() < 1e-12
        assert np.abs(expected[0] + 1.2247448) < 1e-6  # -1.2247, 0, +1.2247

    def test_constant_series_degenerate(self):
        values = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.raises(DegenerateSeries) as err:
            zscore_fit_transform(make_table(values), SplitSpec.from_string("6:2:2"))
        assert err.value.index == 0

    def test_idempotent_on_standardized_train(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(100)
        x[:60] = (x[:60] - x[:60].mean()) / x[:60].std()
        ds = zscore_fit_transform(make_table(x), SplitSpec.from_string("6:2:2"))
        assert np.abs(ds.values[:, 0] - x).max() < 1e-9

    def test_train_stats_are_zero_one(self):
        rng = np.random.default_rng(1)
        ds = make_dataset(rng.standard_normal((200, 3)) * 5 + 7)
        train_end = ds.boundaries[0]
        train = ds.values[:train_end]
        assert np.abs(train.mean(axis=0)).max() < 1e-9
        assert np.abs(train.std(axis=0) - 1.0).max() < 1e-9

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        raw = rng.standard_normal((100, 2)) * 3 + 11
        ds = make_dataset(raw)
        back = ds.denormalize(ds.values)
        assert np.abs(back - raw).max() / np.abs(raw).max() < 1e-9

    def test_too_short_split(self):
        with pytest.raises(TooShort):
            zscore_fit_transform(make_table(np.arange(5.0)), SplitSpec(0.98, 0.01, 0.01))


class TestSplits:
    def test_lengths_622(self):
        ds = make_dataset(np.arange(10.0) + np.linspace(0, 1, 10), split="6:2:2")
        train, val, test = split_chronological(ds)
        assert (len(train), len(val), len(test)) == (6, 2, 2)

    def test_lengths_712(self):
        ds = make_dataset(np.arange(10.0) + np.linspace(0, 1, 10), split="7:1:2")
        train, val, test = split_chronological(ds)
        assert (len(train), len(val), len(test)) == (7, 1, 2)

    def test_partition(self):
        rng = np.random.default_rng(3)
        ds = make_dataset(rng.standard_normal(57))
        train, val, test = split_chronological(ds)
        joined = np.vstack([train.data, val.data, test.data])
        assert np.array_equal(joined, ds.values)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        raw = rng.standard_normal(83)
        a = make_dataset(raw.copy())
        b = make_dataset(raw.copy())
        assert a.boundaries == b.boundaries


class TestKFold:
    def test_quoted_scheme(self):
        seg = Segment(np.zeros((100, 1)), 0, 100)
        folds = kfold_oos_splits(seg, 4)
        assert len(folds) == 4
        first_train, first_val = folds[0]
        assert (first_train.start, first_train.end) == (0, 20)
        assert (first_val.start, first_val.end) == (20, 40)
        last_train, last_val = folds[3]
        assert (last_train.start, last_train.end) == (0, 80)
        assert (last_val.start, last_val.end) == (80, 100)

    def test_single_fold_holdout(self):
        seg = Segment(np.zeros((10, 1)), 0, 10)
        folds = kfold_oos_splits(seg, 1)
        assert len(folds) == 1
        train, val = folds[0]
        assert (train.start, train.end) == (0, 5)
        assert (val.start, val.end) == (5, 10)

    def test_remainder_goes_to_last_block(self):
        seg = Segment(np.zeros((103, 1)), 0, 103)
        folds = kfold_oos_splits(seg, 4)
        assert folds[-1][1].end == 103

    def test_no_leakage(self):
        seg = Segment(np.zeros((57, 1)), 10, 57)
        for train, val in kfold_oos_splits(seg, 3):
            assert train.end <= val.start

    def test_too_short(self):
        seg = Segment(np.zeros((3, 1)), 0, 3)
        with pytest.raises(TooShort):
            kfold_oos_splits(seg, 4)


class TestWindows:
    def test_count_formula(self):
        seg = Segment(np.arange(5.0)[:, None], 0, 5)
        batch = make_windows(seg, lookback=2, horizon=1)
        assert len(batch) == 3  # 5 - 2 - 1 + 1
        assert batch.origin_indices.tolist() == [2, 3, 4]

    def test_window_contents(self):
        seg = Segment(np.arange(6.0)[:, None], 0, 6)
        batch = make_windows(seg, lookback=2, horizon=2)
        x, y = batch.gather()
        assert x[0, :, 0].tolist() == [0.0, 1.0]
        assert y[0, :, 0].tolist() == [2.0, 3.0]

    def test_too_short(self):
        seg = Segment(np.zeros((9, 1)), 0, 9)
        with pytest.raises(TooShort):
            make_windows(seg, lookback=5, horizon=5)

    def test_context_windows_target_only_in_segment(self):
        values = np.arange(20.0)[:, None]
        val_seg = Segment(values, 14, 18)
        batch = make_windows(val_seg, lookback=6, horizon=2, allow_context=True)
        x, y = batch.gather()
        assert y.min() >= 14.0  # targets stay inside the segment
        assert x.min() < 14.0  # inputs reach back into earlier rows
        assert batch.origin_indices.tolist() == [14, 15, 16]

    def test_context_never_before_row_zero(self):
        values = np.arange(10.0)[:, None]
        seg = Segment(values, 2, 10)
        batch = make_windows(seg, lookback=5, horizon=1, allow_context=True)
        assert batch.origin_indices.min() == 5

    @settings(max_examples=60, deadline=None)
    @given(
        length=st.integers(8, 60),
        lookback=st.integers(1, 12),
        horizon=st.integers(1, 8),
        context=st.booleans(),
    )
    def test_no_leakage_property(self, length, lookback, horizon, context):
        values = np.arange(float(2 * length))[:, None]
        seg = Segment(values, length // 2, length)
        try:
            batch = make_windows(seg, lookback, horizon, allow_context=context)
        except TooShort:
            return
        for origin in batch.origin_indices:
            assert origin - 1 < origin  # max input index < min target index
            assert origin - lookback >= 0
            assert origin + horizon <= seg.end
            if not context:
                assert origin - lookback >= seg.start

    def test_gather_subset(self):
        seg = Segment(np.arange(30.0)[:, None], 0, 30)
        batch = make_windows(seg, 3, 2)
        x_all, y_all = batch.gather()
        x_sub, y_sub = batch.gather(np.array([1, 4]))
        assert np.array_equal(x_sub[0], x_all[1])
        assert np.array_equal(y_sub[1], y_all[4])
