"""Covariate fields: GP simulation, evaluation, raster round trips."""

import numpy as np
import pytest

from fusedsdm.covariates import (
    CovariateField,
    GPConfig,
    evaluate,
    ingest_raster,
    region_of,
    simulate_grf,
    write_raster,
)
from fusedsdm.errors import ConfigError, DataError
from fusedsdm.geometry import StudyRegion


class TestSimulateGRF:
    def test_empirical_sd_near_target_across_seeds(self):
        """Spatial sd of a draw stays within [0.7, 1.3] of marginal_sd."""
        region = StudyRegion.unit_square()
        sds = []
        for seed in range(100):
            cfg = GPConfig(n_knots=8, kernel_range=0.15, marginal_sd=1.0,
                           seed=seed)
            field = simulate_grf(region, cfg, 0.05)
            sds.append(field.values.std())
        sds = np.array(sds)
        assert ((sds > 0.7) & (sds < 1.3)).mean() >= 0.95
        assert abs(np.median(sds) - 1.0) < 0.15

    def test_same_seed_identical_fields(self):
        region = StudyRegion.unit_square()
        cfg = GPConfig(seed=42)
        a = simulate_grf(region, cfg, 0.02)
        b = simulate_grf(region, cfg, 0.02)
        assert np.array_equal(a.values, b.values)

    def test_flat_kernel_limit_near_constant(self):
        """kernel_range >> region size makes the field spatially flat."""
        region = StudyRegion.unit_square()
        cfg = GPConfig(n_knots=2, kernel_range=100.0, marginal_sd=1.0, seed=3)
        field = simulate_grf(region, cfg, 0.05)
        spread = field.values.max() - field.values.min()
        assert spread / cfg.marginal_sd < 1e-3

    def test_field_centered(self):
        region = StudyRegion.unit_square()
        field = simulate_grf(region, GPConfig(seed=5), 0.02)
        assert abs(field.values.mean()) < 1e-12


class TestEvaluate:
    def test_constant_field_with_intercept(self):
        field = CovariateField(0, 0, 0.5, 0.5, np.full((2, 2, 1), 3.0))
        assert np.array_equal(evaluate(field, np.array([0.3, 0.6])),
                              np.array([1.0, 3.0]))

    def test_intercept_only_field(self):
        field = CovariateField(0, 0, 0.5, 0.5, np.zeros((2, 2, 0)))
        assert np.array_equal(evaluate(field, np.array([0.3, 0.6])),
                              np.array([1.0]))

    def test_cell_center_returns_stored_value(self, toy_field):
        v = evaluate(toy_field, np.array([0.5, 0.7]))  # cell (ix=2, iy=3)
        assert v[1] == toy_field.values[3, 2, 0]

    def test_piecewise_constant_within_cell(self, toy_field):
        a = evaluate(toy_field, np.array([0.41, 0.41]))
        b = evaluate(toy_field, np.array([0.59, 0.59]))
        assert np.array_equal(a, b)

    def test_out_of_region_errors(self, toy_field):
        with pytest.raises(DataError):
            evaluate(toy_field, np.array([1.4, 0.5]))

    def test_native_grid_quadrature_consistency(self, toy_field):
        """Integrating any cellwise function on the native grid equals the
        exact cell sum."""
        f = np.cos(toy_field.values[:, :, 0])
        exact = f.sum() * toy_field.cell_area
        centers = toy_field.cell_centers()
        vals = np.array([np.cos(evaluate(toy_field, c)[1]) for c in centers])
        assert vals.sum() * toy_field.cell_area == pytest.approx(exact,
                                                                 rel=1e-12)


def write_demo_raster(path, body, ncols=2, nrows=2, cellsize=0.5,
                      nodata=-9999.0):
    with open(path, "w") as fh:
        fh.write(f"ncols {ncols}\nnrows {nrows}\nxll 0.0\nyll 0.0\n")
        fh.write(f"cellsize {cellsize}\nnodata {nodata}\n")
        fh.write(body)


class TestRasterIO:
    def test_2x2_of_ones(self, tmp_path):
        path = tmp_path / "ones.asc"
        write_demo_raster(path, "1 1\n1 1\n")
        field = ingest_raster([path])
        assert field.nx == field.ny == 2
        assert (field.values == 1.0).all()

    def test_row_order_north_first(self, tmp_path):
        path = tmp_path / "r.asc"
        write_demo_raster(path, "3 4\n1 2\n")
        field = ingest_raster([path])
        # row 0 holds the south edge internally
        assert field.values[0, 0, 0] == 1.0
        assert field.values[1, 1, 0] == 4.0

    def test_mismatched_grids_error(self, tmp_path):
        a, b = tmp_path / "a.asc", tmp_path / "b.asc"
        write_demo_raster(a, "1 1\n1 1\n")
        write_demo_raster(b, "1 1\n1 1\n", cellsize=0.25)
        with pytest.raises(DataError, match="cellsize"):
            ingest_raster([a, b])

    def test_nodata_cell_error_names_cell(self, tmp_path):
        path = tmp_path / "bad.asc"
        write_demo_raster(path, "1 1\n1 -9999\n")
        with pytest.raises(DataError, match=r"row 0, col 1"):
            ingest_raster([path])

    def test_missing_header_key_errors(self, tmp_path):
        path = tmp_path / "hdr.asc"
        path.write_text("ncols 2\nnrows 2\nxll 0\nyll 0\n1 1\n1 1\n")
        with pytest.raises(DataError, match="cellsize"):
            ingest_raster([path])

    def test_non_numeric_cell_errors(self, tmp_path):
        path = tmp_path / "txt.asc"
        write_demo_raster(path, "1 x\n1 1\n")
        with pytest.raises(DataError):
            ingest_raster([path])

    def test_write_read_round_trip(self, tmp_path, toy_field):
        path = tmp_path / "rt.asc"
        write_raster(toy_field, path)
        back = ingest_raster([path])
        assert np.allclose(back.values, toy_field.values)
        assert back.dx == toy_field.dx
        region = region_of(back)
        assert (region.xmax, region.ymax) == (1.0, 1.0)

    def test_multiple_covariates_stack(self, tmp_path):
        a, b = tmp_path / "a.asc", tmp_path / "b.asc"
        write_demo_raster(a, "1 1\n1 1\n")
        write_demo_raster(b, "2 2\n2 2\n")
        field = ingest_raster([a, b])
        assert field.q == 2
        assert np.array_equal(evaluate(field, np.array([0.1, 0.1])),
                              np.array([1.0, 1.0, 2.0]))


class TestValidation:
    def test_gp_config_bounds(self):
        with pytest.raises(ConfigError):
            GPConfig(n_knots=1)
        with pytest.raises(ConfigError):
            GPConfig(kernel_range=0.0)

    def test_field_rejects_nonfinite(self):
        with pytest.raises(ConfigError):
            CovariateField(0, 0, 0.5, 0.5, np.full((2, 2, 1), np.nan))
