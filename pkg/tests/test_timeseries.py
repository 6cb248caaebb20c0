"""Generators, ingestion, imputation, pipelines, splits, dataset assembly."""

import os
from datetime import datetime, timedelta

import numpy as np
import pytest

from rnncast.numerics import RngStream
from rnncast.timeseries import (
    FLAG_CORRUPTED,
    FLAG_MISSING,
    FLAG_OK,
    CsvSchema,
    PIPELINE_PRESETS,
    RawSeries,
    autocorrelation,
    build_supervised,
    fit_pipeline,
    fraction_boundaries,
    gen_mackey_glass,
    gen_mso,
    gen_narma,
    impute_adjacent_weeks,
    impute_spline,
    invert_log,
    invert_pipeline,
    invert_seasonal,
    load_csv,
    log_transform,
    mg_derivative,
    month_boundaries,
    normalize_steps,
    seasonal_difference,
    write_csv,
    zscore_apply,
    zscore_invert,
    zscore_stats,
)

# high-precision reference values (30-digit evaluation, rounded to double)
MG_DERIV_AT_START = -0.086628365403871673
MSO_AT_1 = 1.4006178480628403
MSO_AT_7 = 1.5920740062329553
MSO_AT_1000 = -0.8091105685116872


class _ZeroDraws:
    """Generator stub whose uniform() is identically zero."""

    def uniform(self, lo, hi, size):
        return np.zeros(size)


class TestMackeyGlass:
    def test_derivative_at_constant_history(self):
        assert 1.2 ** 10 == pytest.approx(6.1917364224, abs=1e-12)
        assert mg_derivative(1.2, 1.2) == pytest.approx(MG_DERIV_AT_START,
                                                        abs=1e-15)

    def test_no_delay_term_gives_exponential_decay(self):
        s = gen_mackey_glass(100, alpha=0.0, beta=0.1, x0=1.2)
        ref = 1.2 * np.exp(-0.1 * np.arange(100))
        assert np.abs(s - ref).max() < 1e-8

    def test_deterministic_and_bounded(self):
        a = gen_mackey_glass(2000)
        b = gen_mackey_glass(2000)
        np.testing.assert_array_equal(a, b)
        assert a[0] == 1.2
        assert 0.2 < a.min() and a.max() < 1.5

    def test_sample_stride_changes_resolution(self):
        coarse = gen_mackey_glass(50, sample_every=10)
        fine = gen_mackey_glass(491, sample_every=1)
        np.testing.assert_allclose(coarse, fine[::10], rtol=1e-12)

    def test_invalid_arguments_raise(self):
        with pytest.raises(ValueError):
            gen_mackey_glass(0)
        with pytest.raises(ValueError):
            gen_mackey_glass(10, dt=0.0)


class TestNarma:
    def test_zero_input_constant_term_only(self):
        x, y = gen_narma(12, 10, _ZeroDraws())
        assert y[0] == 0.0
        assert y[1] == pytest.approx(0.1, abs=1e-15)
        assert y[2] == pytest.approx(0.1305, abs=1e-15)

    def test_seed_deterministic(self):
        x1, y1 = gen_narma(3000, 10, RngStream(3))
        x2, y2 = gen_narma(3000, 10, RngStream(3))
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(y1, y2)

    def test_long_run_stays_bounded(self):
        _, y = gen_narma(15000, 10, RngStream(3))
        assert np.abs(y).max() < 1e3

    def test_different_streams_differ(self):
        _, y1 = gen_narma(500, 10, RngStream(1))
        _, y2 = gen_narma(500, 10, RngStream(2))
        assert np.abs(y1 - y2).max() > 0

    def test_length_validation(self):
        with pytest.raises(ValueError):
            gen_narma(10, 10, RngStream(0))


class TestMso:
    def test_reference_values(self):
        s = gen_mso(1001)
        assert s[0] == 0.0
        assert s[1] == pytest.approx(MSO_AT_1, abs=1e-12)
        assert s[7] == pytest.approx(MSO_AT_7, abs=1e-12)
        assert s[1000] == pytest.approx(MSO_AT_1000, abs=1e-12)

    def test_deterministic(self):
        np.testing.assert_array_equal(gen_mso(300), gen_mso(300))

    def test_bounded_by_component_count(self):
        assert np.abs(gen_mso(5000)).max() <= 4.0


def _hourly(n, start=datetime(2014, 1, 1)):
    return [start + timedelta(hours=i) for i in range(n)]


class TestLoadCsv:
    def _write(self, tmp_path, body, header="timestamp,value,temp"):
        p = os.path.join(tmp_path, "data.csv")
        with open(p, "w") as fh:
            fh.write(header + "\n" + body)
        return p

    def test_well_formed_rows(self, tmp_path):
        p = self._write(tmp_path,
                        "2014-01-01T00:00:00,5.0,20.0\n"
                        "2014-01-01T01:00:00,6.0,21.0\n"
                        "2014-01-01T02:00:00,7.0,22.0\n")
        s = load_csv(p, CsvSchema("timestamp", "value", ("temp",)))
        assert s.values.tolist() == [5.0, 6.0, 7.0]
        assert s.flags.tolist() == [FLAG_OK] * 3
        assert s.exog[:, 0].tolist() == [20.0, 21.0, 22.0]

    def test_corrupted_marker_flagged(self, tmp_path):
        p = self._write(tmp_path,
                        "2014-01-01T00:00:00,5.0,20.0\n"
                        "2014-01-01T01:00:00,-1,21.0\n")
        s = load_csv(p, CsvSchema("timestamp", "value", ("temp",),
                                  corrupted_marker=-1.0))
        assert s.flags.tolist() == [FLAG_OK, FLAG_CORRUPTED]

    def test_missing_grid_rows_zero_filled(self, tmp_path):
        p = self._write(tmp_path,
                        "2014-01-01T00:00:00,5.0,20.0\n"
                        "2014-01-01T03:00:00,7.0,22.0\n")
        s = load_csv(p, CsvSchema("timestamp", "value", ("temp",),
                                  grid=timedelta(hours=1)))
        assert s.values.tolist() == [5.0, 0.0, 0.0, 7.0]
        assert s.flags.tolist() == [FLAG_OK, FLAG_MISSING, FLAG_MISSING,
                                    FLAG_OK]

    def test_errors_carry_line_numbers(self, tmp_path):
        p = self._write(tmp_path,
                        "2014-01-01T00:00:00,5.0,20.0\n"
                        "2014-01-01T01:00:00,abc,21.0\n")
        with pytest.raises(ValueError, match=":3:"):
            load_csv(p, CsvSchema("timestamp", "value", ("temp",)))
        p = self._write(tmp_path,
                        "2014-01-01T01:00:00,5.0,20.0\n"
                        "2014-01-01T00:00:00,6.0,21.0\n")
        with pytest.raises(ValueError, match="non-monotone"):
            load_csv(p, CsvSchema("timestamp", "value", ("temp",)))
        p = self._write(tmp_path, "2014-01-01T00:00:00,5.0\n")
        with pytest.raises(ValueError, match="ragged"):
            load_csv(p, CsvSchema("timestamp", "value", ("temp",)))

    def test_export_round_trip(self, tmp_path):
        p = self._write(tmp_path,
                        "2014-01-01T00:00:00,5.25,20.0\n"
                        "2014-01-01T01:00:00,6.5,21.0\n")
        s = load_csv(p, CsvSchema("timestamp", "value", ("temp",)))
        out = os.path.join(tmp_path, "out.csv")
        write_csv(out, s)
        s2 = load_csv(out, CsvSchema("timestamp", "value", ("temp",)))
        np.testing.assert_array_equal(s.values, s2.values)
        np.testing.assert_array_equal(s.exog, s2.exog)
        assert s.timestamps == s2.timestamps


class TestImputation:
    def _series(self, values, bad_at=()):
        flags = np.zeros(len(values), np.int8)
        for i in bad_at:
            flags[i] = FLAG_CORRUPTED
        return RawSeries(_hourly(len(values)), np.asarray(values, float),
                         flags)

    def test_adjacent_weeks_mean(self):
        vals = np.zeros(21)
        vals[3], vals[17] = 4.0, 6.0
        s = self._series(vals, bad_at=[10])
        out = impute_adjacent_weeks(s, 7)
        assert out.values[10] == 5.0
        assert out.flags[10] == FLAG_OK

    def test_single_neighbor_at_boundary(self):
        vals = np.zeros(14)
        vals[9] = 8.0
        s = self._series(vals, bad_at=[2])
        assert impute_adjacent_weeks(s, 7).values[2] == 8.0

    def test_both_neighbors_corrupted_fall_back_to_mean(self):
        vals = np.ones(21) * 3.0
        s = self._series(vals, bad_at=[3, 10, 17])
        out = impute_adjacent_weeks(s, 7)
        assert out.values[10] == 3.0

    def test_clean_series_unchanged(self):
        s = self._series(np.arange(10.0))
        assert impute_adjacent_weeks(s, 7) is s
        assert impute_spline(s) is s

    def test_spline_recovers_cubic_interior_point(self):
        idx = np.arange(30.0)
        cubic = 0.5 * idx ** 3 - 2 * idx ** 2 + idx
        s = self._series(cubic, bad_at=[15])
        out = impute_spline(s)
        assert abs(out.values[15] - cubic[15]) < 1e-6

    def test_spline_near_linear_on_linear_segment(self):
        vals = 2.0 * np.arange(20.0) + 1.0
        s = self._series(vals, bad_at=[10])
        out = impute_spline(s)
        assert abs(out.values[10] - vals[10]) < 1e-9

    def test_spline_needs_four_clean_points(self):
        s = self._series([1.0, 2.0, 3.0, 4.0], bad_at=[1])
        with pytest.raises(ValueError):
            impute_spline(s)


class TestElementaryTransforms:
    def test_seasonal_difference_example(self):
        d = seasonal_difference([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2)
        np.testing.assert_array_equal(d, [2.0, 2.0, 2.0, 2.0])

    def test_periodic_signal_differences_to_zero(self):
        x = np.tile([3.0, 1.0, 4.0, 1.0], 10)
        assert np.abs(seasonal_difference(x, 4)).max() == 0.0

    def test_seasonal_round_trip_exact(self):
        x = RngStream(1).generator().standard_normal(200)
        d = seasonal_difference(x, 24)
        np.testing.assert_allclose(invert_seasonal(d, x[:24]), x,
                                   atol=1e-12)

    def test_log_round_trip_admits_zero(self):
        x = np.array([0.0, 1.0, 10.0, 0.5])
        np.testing.assert_allclose(invert_log(log_transform(x)), x,
                                   atol=1e-12)
        with pytest.raises(ValueError):
            log_transform(np.array([-1.5]))

    def test_zscore_normalizes_training_split(self):
        x = RngStream(2).generator().standard_normal(500) * 3 + 7
        stats = zscore_stats(x[:300])
        z = zscore_apply(x, stats)
        assert abs(z[:300].mean()) < 1e-12
        assert abs(z[:300].std() - 1.0) < 1e-12
        np.testing.assert_allclose(zscore_invert(z, stats), x, atol=1e-12)

    def test_zscore_rejects_constant_split(self):
        with pytest.raises(ValueError):
            zscore_stats(np.ones(10))


class TestAutocorrelation:
    def test_lag_zero_is_one(self):
        x = RngStream(3).generator().standard_normal(100)
        assert autocorrelation(x, 5)[0] == 1.0

    def test_sine_peaks_at_period(self):
        x = np.sin(2 * np.pi * np.arange(3000) / 25)
        acf = autocorrelation(x, 30)
        assert int(np.argmax(acf[20:30])) + 20 == 25

    def test_white_noise_within_band(self):
        x = RngStream(5).generator().standard_normal(10000)
        assert np.abs(autocorrelation(x, 20)[1:]).max() < 0.05

    def test_constant_series_reported(self):
        with pytest.raises(ValueError):
            autocorrelation(np.full(50, 2.0), 3)


class TestPipeline:
    def test_presets_round_trip_exactly(self):
        gen = RngStream(11).generator()
        raw = np.abs(gen.standard_normal(2000)) + 0.5
        for steps in PIPELINE_PRESETS.values():
            y, fp = fit_pipeline(raw, steps, train_len=1400)
            back = invert_pipeline(fp, y, 0)
            assert np.abs(back - raw[fp.offset:]).max() < 1e-12

    def test_windowed_inversion_matches_raw(self):
        gen = RngStream(13).generator()
        raw = np.abs(gen.standard_normal(1200)) + 0.5
        y, fp = fit_pipeline(raw, ("log", "diff:24", "zscore"), 800)
        w = invert_pipeline(fp, y[300:400], 300)
        np.testing.assert_allclose(
            w, raw[fp.offset + 300:fp.offset + 400], atol=1e-12)

    def test_statistics_ignore_test_region(self):
        gen = RngStream(17).generator()
        raw = np.abs(gen.standard_normal(1000)) + 0.5
        moved = raw.copy()
        moved[800:] += 100.0
        _, fp1 = fit_pipeline(raw, ("zscore",), 700)
        _, fp2 = fit_pipeline(moved, ("zscore",), 700)
        assert fp1.records[0]["stats"] == fp2.records[0]["stats"]

    def test_steps_apply_in_declared_order(self):
        raw = np.abs(RngStream(19).generator().standard_normal(300)) + 0.5
        y, _ = fit_pipeline(raw, ("log", "diff:24"), 200)
        manual = seasonal_difference(log_transform(raw), 24)
        np.testing.assert_array_equal(y, manual)

    def test_string_and_tuple_steps_equivalent(self):
        assert normalize_steps(["log", "diff:24", "zscore"]) == \
            normalize_steps([("log",), ("diff", 24), ("zscore",)])

    def test_unknown_step_rejected(self):
        with pytest.raises(ValueError):
            normalize_steps(["boxcox"])


class TestSplits:
    def test_synthetic_fractions(self):
        assert fraction_boundaries(15000, (0.6, 0.2, 0.2)) == (9000, 12000)

    def test_floor_then_remainder_rounding(self):
        b1, b2 = fraction_boundaries(3336, (0.7, 0.15, 0.15))
        assert (b1, b2 - b1, 3336 - b2) == (2335, 500, 501)

    def test_degenerate_split_rejected(self):
        with pytest.raises(ValueError):
            fraction_boundaries(100, (1.0, 0.0, 0.0))

    def test_month_boundaries_on_calendar_changes(self):
        ts = _hourly(24 * 120)
        b1, b2 = month_boundaries(ts, 2, 1)
        assert ts[b1] == datetime(2014, 3, 1)
        assert ts[b2] == datetime(2014, 4, 1)
        assert ts[b1 - 1].month == 2 and ts[b2 - 1].month == 3

    def test_month_split_needs_enough_months(self):
        with pytest.raises(ValueError):
            month_boundaries(_hourly(24 * 40), 3, 1)


class TestBuildSupervised:
    def test_one_step_pairs(self):
        ds = build_supervised(np.array([1.0, 2.0, 3.0]), None, 1, (1, 2))
        np.testing.assert_array_equal(ds.train_x, [[1.0]])
        np.testing.assert_array_equal(ds.train_y, [[2.0]])
        np.testing.assert_array_equal(ds.valid_x, [[2.0]])
        np.testing.assert_array_equal(ds.valid_y, [[3.0]])

    def test_horizon_offsets_labels(self):
        t = np.arange(100.0)
        ds = build_supervised(t, None, 24, (60, 70))
        np.testing.assert_array_equal(ds.train_y[:, 0], t[24:84])
        assert ds.test_x.shape[0] == 100 - 24 - 70

    def test_exogenous_channels_appended(self):
        t = np.arange(50.0)
        temp = 100 + np.arange(50.0)
        ds = build_supervised(t, temp, 1, (30, 40))
        assert ds.train_x.shape == (30, 2)
        np.testing.assert_array_equal(ds.train_x[:, 1], temp[:30])

    def test_inputs_never_read_future(self):
        # moving any value after index t leaves row t untouched
        t = np.arange(50.0)
        ds1 = build_supervised(t, None, 5, (30, 40))
        t2 = t.copy()
        t2[20:] += 1000
        ds2 = build_supervised(t2, None, 5, (30, 40))
        np.testing.assert_array_equal(ds1.train_x[:15], ds2.train_x[:15])
        np.testing.assert_array_equal(ds1.train_y[:10], ds2.train_y[:10])

    def test_bad_horizon_rejected(self):
        with pytest.raises(ValueError):
            build_supervised(np.arange(10.0), None, 10, (5, 7))
