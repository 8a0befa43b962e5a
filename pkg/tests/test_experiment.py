"""Study harness: design builder, bookkeeping, determinism, reports."""

import math
import os

import numpy as np
import pytest

from fusedsdm.covariates import GPConfig, simulate_grf
from fusedsdm.errors import ConfigError
from fusedsdm.experiment import (
    StudyConfig,
    build_study_design,
    coverage,
    emit_reports,
    relative_efficiency,
    run_study,
    true_abundance,
)
from fusedsdm.geometry import StudyRegion, check_nonoverlap
from fusedsdm.pointprocess import ModelParams


def small_config(**kwargs):
    from fusedsdm.likelihoods import QuadratureSettings

    defaults = dict(replicates=2, root_seed=5, workers=1,
                    truth=ModelParams(np.array([7.0, 1.0]), 0.025, 0.2),
                    gp=GPConfig(n_knots=6, kernel_range=0.2, seed=3),
                    grid_resolution=0.02,
                    quadrature=QuadratureSettings(spacing_fraction=0.1))
    defaults.update(kwargs)
    return StudyConfig(**defaults)


class TestStudyDesign:
    def test_counts_and_radii(self):
        design = build_study_design(0)
        points = [r for r in design.regions if r.unit.kind == "point"]
        traps = [r for r in design.regions if r.unit.kind == "trap"]
        assert len(points) == 15 and len(traps) == 65
        assert all(r.radius == 0.04 for r in points)
        assert all(r.radius == 0.02 for r in traps)

    @pytest.mark.parametrize("seed", [0, 1, 7, 123])
    def test_nonoverlapping_for_any_seed(self, seed):
        ok, pairs = check_nonoverlap(build_study_design(seed))
        assert ok, pairs

    def test_all_units_inside_unit_square(self):
        design = build_study_design(3)
        region = StudyRegion.unit_square()
        for r in design.regions:
            assert region.contains(np.atleast_2d(r.unit.xy)).all()

    def test_deterministic_given_seed(self):
        a = build_study_design(11)
        b = build_study_design(11)
        for ra, rb in zip(a.regions, b.regions):
            assert np.array_equal(ra.unit.xy, rb.unit.xy)


class TestCoverage:
    def test_all_contain(self):
        assert coverage([(0, 2), (0.5, 1.5)], 1.0) == 1.0

    def test_none_contain(self):
        assert coverage([(2, 3), (4, 5)], 1.0) == 0.0

    def test_boundary_touching_counts_as_covering(self):
        assert coverage([(1.0, 2.0)], 1.0) == 1.0
        assert coverage([(0.0, 1.0)], 1.0) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            coverage([], 1.0)


class TestRelativeEfficiency:
    def test_ratio(self):
        assert relative_efficiency(2.0, 1.0) == 2.0

    def test_equal_sds(self):
        assert relative_efficiency(0.7, 0.7) == 1.0

    def test_zero_benchmark_rejected(self):
        with pytest.raises(ConfigError):
            relative_efficiency(1.0, 0.0)


class TestTrueAbundance:
    def test_intercept_only_constant_field(self):
        from fusedsdm.covariates import CovariateField
        config = small_config(truth=ModelParams(np.array([9.0]), 0.025, 0.2))
        field = CovariateField(0, 0, 0.25, 0.25, np.zeros((4, 4, 0)))
        assert math.log(true_abundance(config, field)) == pytest.approx(9.0)

    def test_zero_coefficients_unit_square(self):
        from fusedsdm.covariates import CovariateField
        config = small_config(
            truth=ModelParams(np.array([0.0, 0.0]), 0.025, 0.2))
        field = CovariateField(0, 0, 0.25, 0.25, np.zeros((4, 4, 1)))
        assert true_abundance(config, field) == pytest.approx(1.0)

    def test_default_study_field_hits_calibration_target(self):
        """log lambda_bar at the truth lands on 9.5 +/- 0.1."""
        config = StudyConfig(replicates=1)
        field = simulate_grf(config.region, config.gp,
                             config.grid_resolution)
        assert abs(math.log(true_abundance(config, field)) - 9.5) <= 0.1


@pytest.fixture(scope="module")
def tiny_report():
    return run_study(small_config())


class TestRunStudy:
    def test_two_rows_per_scenario(self, tiny_report):
        for scenario in tiny_report.scenarios:
            rows = [r for r in tiny_report.rows if r["scenario"] == scenario]
            assert len(rows) == 2

    def test_summary_has_one_entry_per_scenario(self, tiny_report):
        assert [e["scenario"] for e in tiny_report.summary] == \
            list(tiny_report.scenarios)

    def test_exclusion_counts_reported(self, tiny_report):
        for e in tiny_report.summary:
            assert e["n_used"] + e["n_excluded"] == e["n_replicates"] == 2

    def test_failed_fit_never_aborts_study(self, monkeypatch):
        import fusedsdm.experiment as exp

        real_fit = exp.fit
        calls = {"n": 0}

        def flaky_fit(spec, *args, **kwargs):
            calls["n"] += 1
            if spec.scenario == "fused-region":
                raise RuntimeError("synthetic failure")
            return real_fit(spec, *args, **kwargs)

        monkeypatch.setattr(exp, "fit", flaky_fit)
        report = run_study(small_config(replicates=1))
        failed = [r for r in report.rows if r["scenario"] == "fused-region"]
        assert failed[0]["status"] == "error"
        assert "synthetic failure" in failed[0]["message"]
        others = [r for r in report.rows if r["scenario"] != "fused-region"]
        assert all(r["status"] != "error" for r in others)

    def test_workers_do_not_change_results(self):
        cfg1 = small_config(workers=1)
        cfg2 = small_config(workers=2)
        a = run_study(cfg1)
        b = run_study(cfg2)
        for ra, rb in zip(a.rows, b.rows):
            assert ra == rb


class TestEmitReports:
    def test_files_and_determinism(self, tmp_path):
        cfg = small_config()
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        emit_reports(run_study(cfg), out1)
        emit_reports(run_study(cfg), out2)
        names = ["estimates.csv", "summary.csv", "boxplot_data.csv",
                 "run_manifest.json"]
        for name in names:
            assert (out1 / name).exists()
        for name in ["estimates.csv", "summary.csv", "boxplot_data.csv"]:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_summary_one_row_per_scenario(self, tmp_path):
        report = run_study(small_config())
        emit_reports(report, tmp_path)
        lines = (tmp_path / "summary.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + len(report.scenarios)

    def test_coverage_column_consistent_with_rows(self, tmp_path):
        """Recomputing CI hits from the estimate table reproduces the
        reported coverage."""
        report = run_study(small_config(replicates=3))
        truth = report.truth
        for entry in report.summary:
            rows = [r for r in report.rows
                    if r["scenario"] == entry["scenario"]
                    and r["status"] == "ok"]
            if not rows:
                continue
            hits = sum(1 for r in rows
                       if r["ci_beta0_lo"] <= truth["beta0"]
                       <= r["ci_beta0_hi"])
            assert entry["beta0_cp"] == pytest.approx(hits / len(rows))
