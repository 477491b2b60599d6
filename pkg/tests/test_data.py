import numpy as np
import pytest

from st_impute.baselines import impute_linear, impute_mean
from st_impute.data import (
    Dataset,
    Series,
    generate_synthetic,
    infer_task,
    load_csv,
    make_batches,
    save_csv,
    split_train_test,
)
from st_impute.errors import DataError
from st_impute.experiment import corrupt, score


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_one_empty_cell(self, tmp_path):
        ds = load_csv(_write(tmp_path, "series_id,t,x\na,0,1.5\na,1,\na,2,3\n"))
        assert len(ds.series) == 1
        assert ds.series[0].natural_missing.sum() == 1
        assert ds.series[0].natural_missing[1, 0]

    def test_no_label_column(self, tmp_path):
        ds = load_csv(_write(tmp_path, "series_id,t,x\na,0,1\n"))
        assert ds.task == "none" and ds.series[0].label is None

    def test_sorted_by_t_and_grouped(self, tmp_path):
        ds = load_csv(_write(tmp_path, "series_id,t,x,y,label\nb,1,4,NaN,0\na,0,1,2,1\nb,0,3,5,0\n"))
        b = [s for s in ds.series if s.series_id == "b"][0]
        np.testing.assert_array_equal(b.t, [0, 1])
        np.testing.assert_array_equal(b.values[:, 0], [3, 4])
        assert np.isnan(b.values[1, 1])
        assert ds.task == "classification" and ds.n_classes == 2

    def test_regression_labels(self):
        assert infer_task([0.5, 1.25]) == ("regression", 0)
        assert infer_task([0.0, 2.0]) == ("classification", 3)

    @pytest.mark.parametrize("text, line", [
        ("series_id,t,x\na,0,1\na,1\n", 3),
        ("series_id,t,x\na,0,abc\n", 2),
        ("series_id,t,x\na,0,1\nb,0,1\na,0,2\n", 4),
    ])
    def test_errors_carry_line_number(self, tmp_path, text, line):
        with pytest.raises(DataError, match=f"line {line}"):
            load_csv(_write(tmp_path, text))

    def test_bad_header_and_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(_write(tmp_path, "id,time,x\n"))
        with pytest.raises(DataError):
            load_csv(tmp_path / "absent.csv")

    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(n_series=6, length=10, n_features=3, seed=1, task="regression")
        ds.series[2].values[4, 0] = np.nan
        save_csv(ds, tmp_path / "a.csv")
        back = load_csv(tmp_path / "a.csv")
        assert back.feature_names == ds.feature_names
        for a, b in zip(ds.series, back.series):
            assert a.series_id == b.series_id and a.label == b.label
            np.testing.assert_array_equal(a.values, b.values)  # NaN positions compare equal
        save_csv(back, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestSynthetic:
    def test_reproducible(self):
        a = generate_synthetic(n_series=5, seed=4)
        b = generate_synthetic(n_series=5, seed=4)
        for x, y in zip(a.series, b.series):
            np.testing.assert_array_equal(x.values, y.values)
            assert x.label == y.label

    def test_class_balance(self):
        labels = np.array([s.label for s in generate_synthetic(n_series=200, seed=0).series])
        assert 0.45 <= labels.mean() <= 0.55

    def test_shapes_and_tasks(self):
        ds = generate_synthetic(n_series=3, length=20, n_features=4, task="none")
        assert ds.series[0].values.shape == (20, 4) and ds.task == "none" and ds.series[0].label is None
        ds = generate_synthetic(n_series=3, task="regression")
        assert all(0.5 <= s.label <= 1.5 for s in ds.series)

    def test_signal_is_imputable(self):
        ds = generate_synthetic(n_series=200, seed=0)
        arrays = [s.values for s in ds.series]
        corrupted, holdouts = corrupt(arrays, "mcar", 0.1, seed=0)
        lin = score([impute_linear(c) for c in corrupted], arrays, holdouts)["rmse"]
        mean = score([impute_mean(c) for c in corrupted], arrays, holdouts)["rmse"]
        assert lin < 0.5 * mean


class TestNormalization:
    def _ds(self):
        ds = generate_synthetic(n_series=20, seed=2)
        split_train_test(ds, 0.25, seed=0)
        return ds

    def test_split(self):
        ds = self._ds()
        assert len(ds.subset("test")) == 5 and len(ds.subset("train")) == 15

    def test_train_stats_are_z_scores(self):
        ds = self._ds()
        ds.fit_normalization()
        z = np.concatenate(ds.normalized(ds.subset("train")))
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)

    def test_leak_free(self):
        ds = self._ds()
        before = ds.fit_normalization()
        for s in ds.subset("test"):
            s.values *= 1000.0
            s.values[0, 0] = np.nan
        after = ds.fit_normalization()
        np.testing.assert_array_equal(before.mean, after.mean)
        np.testing.assert_array_equal(before.std, after.std)

    def test_missing_values_ignored_and_constant_channel(self):
        s = Series("a", np.arange(3.0), np.array([[1.0, 2.0], [np.nan, 2.0], [3.0, 2.0]]))
        norm = Dataset([s], ["x", "y"]).fit_normalization()
        assert norm.mean[0] == 2.0
        assert norm.constant.tolist() == [False, True] and norm.std[1] == 1.0
        x = np.array([[5.0, 7.0]])
        np.testing.assert_allclose(norm.invert(norm.apply(x)), x, rtol=1e-15)


def test_make_batches_groups_by_length():
    arrays = [np.zeros((5, 1)), np.zeros((7, 1)), np.zeros((5, 1)), np.zeros((5, 1))]
    batches = make_batches(arrays, np.array([0.0, 1.0, 1.0, np.nan]), batch_size=2)
    assert [list(i) for i, _ in batches] == [[0, 2], [3], [1]]
    assert batches[1][1].labels.shape == (1,)
    assert np.isnan(batches[1][1].labels[0])
