import numpy as np
import pandas as pd
import pytest

from bse_errors import InputError
from bse_metrics import (
    SDR_CAP_DB,
    MetricReport,
    ReportTables,
    evaluate_estimate,
    evaluate_run,
    score_pairs,
    sdr,
)


class TestSdr:
    def test_perfect_estimate_capped(self, rng):
        s = rng.standard_normal(1000)
        assert sdr(s, s) == SDR_CAP_DB

    def test_scaled_estimate_capped(self, rng):
        s = rng.standard_normal(1000)
        assert sdr(2.0 * s, s) == SDR_CAP_DB

    def test_equal_power_orthogonal_noise(self, rng):
        s = rng.standard_normal(1000)
        n = rng.standard_normal(1000)
        n -= np.dot(n, s) / np.dot(s, s) * s
        n *= np.linalg.norm(s) / np.linalg.norm(n)
        assert sdr(s + n, s) == pytest.approx(0.0, abs=1e-9)

    def test_scale_and_sign_invariance(self, rng):
        s = rng.standard_normal(1000)
        estimate = s + 0.3 * rng.standard_normal(1000)
        base = sdr(estimate, s)
        assert sdr(3.7 * estimate, s) == pytest.approx(base, abs=1e-9)
        assert sdr(-estimate, s) == pytest.approx(base, abs=1e-9)

    def test_zero_reference(self):
        with pytest.raises(InputError):
            sdr(np.ones(10), np.zeros(10))

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            sdr(np.ones(10), np.ones(11))


class TestReports:
    def test_initialization_only(self, rng):
        s = rng.standard_normal(500)
        mixture = s + rng.standard_normal(500)
        report = evaluate_run([(0, s + 0.5 * rng.standard_normal(500))], s, mixture)
        assert [it for it, _ in report.per_iteration] == [0]
        assert report.peak_improvement_db == report.final_improvement_db

    def test_monotone_run_peaks_at_end(self, rng):
        s = rng.standard_normal(500)
        noise = rng.standard_normal(500)
        trajectory = [(it, s + noise / (it + 1)) for it in range(6)]
        report = evaluate_run(trajectory, s, s + noise)
        scores = [score for _, score in report.per_iteration]
        assert np.all(np.diff(scores) > 0)
        assert report.peak_improvement_db == report.final_improvement_db
        assert report.sdr_improvement_db == pytest.approx(report.sdr_db - report.input_sdr_db)

    def test_trajectory_consumed_lazily(self, rng):
        s = rng.standard_normal(500)
        noise = rng.standard_normal(500)
        produced = []

        def estimates():
            for it in range(4):
                produced.append(it)
                yield it, s + noise / (it + 1)

        report = evaluate_run(estimates(), s, s + noise, method="proposed", scene={"talker": 3})
        assert produced == [0, 1, 2, 3]
        assert [it for it, _ in report.per_iteration] == [0, 1, 2, 3]
        assert report.scene == {"talker": 3}
        with pytest.raises(InputError):
            evaluate_run(iter([]), s, s + noise)

    def test_length_mismatch(self, rng):
        with pytest.raises(InputError):
            evaluate_run([(0, np.ones(9))], rng.standard_normal(10), rng.standard_normal(10))
        with pytest.raises(InputError):
            evaluate_run([], np.ones(10), np.ones(10))


def scene_reports():
    reports = []
    for seed in (0, 1):
        scene = {"seed": seed, "talker": 0, "direction": 0.0, "noise_kind": "gaussian"}
        reports.append(MetricReport("ilrma", -1.0, 5.0, 6.0 + seed, scene=scene))
        for method, offset in (("conventional", 8.0), ("proposed", 9.0)):
            per_iteration = [(0, 6.0), (1, offset + seed), (2, offset - 0.5 + seed)]
            reports.append(MetricReport(method, -1.0, 0.0, per_iteration[-1][1], per_iteration, scene))
    return reports


class TestTables:
    def test_peak_final_summary(self):
        summary = ReportTables.summarize_reports(scene_reports())
        assert list(summary["method"]) == ["ilrma", "conventional", "proposed"]
        assert list(summary["score"]) == ["6.5 / -", "8.5 / 8.0", "9.5 / 9.0"]
        assert np.isnan(summary["final_db"].iloc[0])

    def test_trajectory_roundtrip(self, tmp_path):
        reports = scene_reports()
        df = ReportTables.trajectory_dataframe(reports)
        assert list(df.columns) == ["seed", "talker", "direction", "noise_kind", "variant", "iteration", "sdr_improvement_db"]
        assert len(df) == 2 * (1 + 3 + 3)

        path = tmp_path / "trajectory.csv"
        ReportTables.save_table(df, path)
        rebuilt = ReportTables.reports_from_dataframe(pd.read_csv(path))
        summary = ReportTables.summarize_reports(rebuilt)
        assert list(summary["score"]) == ["6.5 / -", "8.5 / 8.0", "9.5 / 9.0"]

    def test_mean_curves(self):
        curves = ReportTables.mean_curves(scene_reports())
        assert list(curves.columns) == ["conventional", "proposed"]
        assert curves.loc[1, "proposed"] == pytest.approx(9.5)

    def test_baseline_report_has_no_trajectory(self, rng):
        s = rng.standard_normal(200)
        report = evaluate_estimate(s, s, s + rng.standard_normal(200), method="ilrma")
        assert not report.has_trajectory
        assert report.sdr_db == SDR_CAP_DB


def test_score_pairs_adds_mean_row(rng):
    pairs = []
    for name in ("a", "b", "c"):
        s = rng.standard_normal(300)
        pairs.append((name, s + 0.1 * rng.standard_normal(300), s))
    df = score_pairs(pairs)
    assert list(df["name"]) == ["a", "b", "c", "mean"]
    assert df["sdr_db"].iloc[3] == pytest.approx(df["sdr_db"].iloc[:3].mean())
