import json

import numpy as np
import pytest

from apci import GAUSSIAN, LOGIT, run_analysis
from apci.report import (
    atomic_write_text,
    patterns_csv_text,
    pattern_rows_age,
    pattern_rows_period,
    render_report,
    result_to_json,
    write_artifacts,
)

from conftest import balanced_dataset, square_grid


@pytest.fixture(scope="module")
def result():
    rng = np.random.default_rng(60)
    data = balanced_dataset(4, 3, rng, family="logit", n_per_cell=40)
    return run_analysis(data, square_grid(4, 3), family=LOGIT)


class TestTextReport:
    def test_star_note_verbatim(self, result):
        text = render_report(result)
        assert "***=p<0.001; ** = p < 0.01; * = p < 0.05" in text

    def test_sections_present(self, result):
        text = render_report(result)
        for heading in (
            "Global interaction test",
            "Main effects",
            "Age-by-period interactions",
            "Cohort deviation magnitude tests",
            "Cohort summaries",
        ):
            assert heading in text

    def test_every_cohort_listed(self, result):
        text = render_report(result)
        for rep in result.cohorts:
            assert rep.label in text

    def test_fixed_layout_is_stable(self, result):
        assert render_report(result) == render_report(result)


class TestJson:
    def test_round_trips_and_has_core_keys(self, result):
        payload = json.loads(result_to_json(result, extra={"n_dropped": 0}))
        for key in ("fit", "interaction_matrix", "global_test", "cohorts", "alpha", "n_dropped"):
            assert key in payload
        inter = np.asarray(payload["interaction_matrix"]["estimate"])
        assert inter.shape == (4, 3)
        assert payload["fit"]["fit"]["columns"][0] == ["intercept"]


class TestPatternsCsv:
    def test_schema_and_counts(self, result):
        text = patterns_csv_text(pattern_rows_age(result))
        lines = text.strip().splitlines()
        assert lines[0] == "mode,series,x_index,x_label,linear_predictor,value"
        # one row per (period, age) pair plus the mains-only age curve
        assert len(lines) - 1 == 4 * 3 + 4

    def test_period_rows(self, result):
        text = patterns_csv_text(pattern_rows_period(result))
        assert len(text.strip().splitlines()) - 1 == 4 * 3 + 3


class TestAtomicWrites:
    def test_write_then_replace(self, tmp_path):
        path = tmp_path / "x.txt"
        atomic_write_text(path, "one")
        atomic_write_text(path, "two")
        assert path.read_text() == "two"
        assert list(tmp_path.iterdir()) == [path]

    def test_no_partial_file_on_failure(self, tmp_path):
        class Boom:
            def encode(self, *_):
                raise RuntimeError("boom")

        path = tmp_path / "y.txt"
        with pytest.raises(RuntimeError):
            atomic_write_text(path, Boom())
        assert not path.exists()
        assert list(tmp_path.iterdir()) == []


class TestWriteArtifacts:
    def test_all_artifacts_present(self, result, tmp_path):
        artifacts = write_artifacts(result, tmp_path)
        expected = {
            "fit.json",
            "report.txt",
            "patterns_age.csv",
            "patterns_period.csv",
            "patterns_age.png",
            "patterns_period.png",
            "mains.png",
        }
        assert set(artifacts) == expected
        for name, path in artifacts.items():
            assert path.exists() and path.stat().st_size > 0
        assert (tmp_path / "patterns_age.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_figures_optional(self, result, tmp_path):
        artifacts = write_artifacts(result, tmp_path, figures=False)
        assert set(artifacts) == {"fit.json", "report.txt", "patterns_age.csv", "patterns_period.csv"}

    def test_gaussian_label(self, tmp_path):
        rng = np.random.default_rng(61)
        data = balanced_dataset(3, 3, rng, family="gaussian", n_per_cell=10)
        res = run_analysis(data, square_grid(3, 3), family=GAUSSIAN)
        artifacts = write_artifacts(res, tmp_path, figures=False)
        assert "gaussian_identity" in (tmp_path / "report.txt").read_text()
