"""Geometry: distances, quadrature rules, partitions, overlap checks."""

import math

import numpy as np
import pytest

from fusedsdm.errors import ConfigError, DataError
from fusedsdm.geometry import (
    LINE_SUPPORT,
    REGION_SUPPORT,
    ObservedLocationSupport,
    SampledRegion,
    StudyRegion,
    SurveyDesign,
    SurveyUnit,
    area_rule,
    build_partitions,
    check_nonoverlap,
    distance_to_unit,
    line_rule,
    load_design,
    native_area_rule,
    save_design,
)


def point_unit(x, y, uid="p"):
    return SurveyUnit(uid, "point", np.array([x, y], dtype=float))


def trap_unit(x, y, uid="t"):
    return SurveyUnit(uid, "trap", np.array([x, y], dtype=float))


def transect_unit(coords, uid="tr"):
    return SurveyUnit(uid, "transect", np.array(coords, dtype=float))


class TestDistanceToUnit:
    def test_coincident_points(self):
        assert distance_to_unit(np.array([0.0, 0.0]), point_unit(0, 0)) == 0.0

    def test_three_four_five(self):
        assert distance_to_unit(np.array([3.0, 4.0]), point_unit(0, 0)) == pytest.approx(5.0)

    def test_perpendicular_drop_onto_segment_interior(self):
        tr = transect_unit([[0.0, 0.0], [1.0, 0.0]])
        assert distance_to_unit(np.array([0.5, 0.3]), tr) == pytest.approx(0.3)

    def test_beyond_segment_end_uses_endpoint(self):
        tr = transect_unit([[0.0, 0.0], [1.0, 0.0]])
        d = distance_to_unit(np.array([1.3, 0.4]), tr)
        assert d == pytest.approx(0.5)

    def test_reflection_symmetry(self):
        """Distances are invariant under reflecting the coordinate frame."""
        rng = np.random.default_rng(5)
        for _ in range(20):
            s = rng.uniform(-1, 1, 2)
            a, b = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
            tr = transect_unit([a, b])
            tr_ref = transect_unit([a * [-1, 1], b * [-1, 1]])
            d = distance_to_unit(s, tr)
            d_ref = distance_to_unit(s * [-1, 1], tr_ref)
            assert d == pytest.approx(d_ref, abs=1e-12)


class TestAreaRule:
    def test_disk_area_within_one_percent(self):
        reg = SampledRegion(point_unit(0.5, 0.5), 0.04)
        rule = area_rule(reg, 0.002)
        assert rule.total == pytest.approx(math.pi * 0.04 ** 2, rel=0.01)

    def test_unit_square_exact_tiling(self):
        rule = area_rule(StudyRegion.unit_square(), 0.1)
        assert rule.total == pytest.approx(1.0, abs=1e-12)

    def test_strip_area(self):
        reg = SampledRegion(transect_unit([[0.2, 0.5], [0.5, 0.5]]), 0.02)
        rule = area_rule(reg, 0.001)
        assert rule.total == pytest.approx(0.012, rel=0.01)

    def test_zero_nodes_in_region_errors(self):
        # A disk entirely outside the clipping region leaves no nodes.
        reg = SampledRegion(point_unit(-0.2, 0.5), 0.05)
        with pytest.raises(ConfigError):
            area_rule(reg, 0.01, within=StudyRegion.unit_square())

    def test_disk_halving_spacing_converges_monotonically(self):
        reg = SampledRegion(point_unit(0.37, 0.53), 0.04)
        errors = []
        for spacing in (reg.radius / 4, reg.radius / 8, reg.radius / 16,
                        reg.radius / 32):
            rule = area_rule(reg, spacing)
            errors.append(abs(rule.total - reg.measure))
        assert all(e2 < e1 for e1, e2 in zip(errors, errors[1:]))

    def test_strip_rule_tiles_exactly_at_every_spacing(self):
        reg = SampledRegion(transect_unit([[0.2, 0.31], [0.61, 0.31]]), 0.02)
        errors = []
        for spacing in (reg.radius / 4, reg.radius / 8, reg.radius / 16):
            rule = area_rule(reg, spacing)
            errors.append(abs(rule.total - reg.measure))
        assert all(e2 <= e1 for e1, e2 in zip(errors, errors[1:]))
        assert errors[-1] < 1e-12

    def test_clipped_to_study_region(self):
        reg = SampledRegion(point_unit(0.0, 0.5), 0.1)
        rule = area_rule(reg, 0.005, within=StudyRegion.unit_square())
        assert rule.total == pytest.approx(math.pi * 0.1 ** 2 / 2, rel=0.02)


class TestLineRule:
    def test_circle_perimeter_weight_sum(self):
        reg = SampledRegion(point_unit(0.5, 0.5), 0.04)
        support = ObservedLocationSupport(LINE_SUPPORT, reg, 0.02)
        rule = line_rule(support, 64)
        assert rule.total == pytest.approx(2 * math.pi * 0.02, abs=1e-12)

    def test_circle_nodes_at_recorded_distance(self):
        reg = SampledRegion(point_unit(0.3, 0.4), 0.04)
        support = ObservedLocationSupport(LINE_SUPPORT, reg, 0.017)
        rule = line_rule(support, 128)
        d = np.sqrt(((rule.nodes - [0.3, 0.4]) ** 2).sum(axis=1))
        assert np.abs(d - 0.017).max() < 1e-9

    def test_parallel_lines_weight_sum(self):
        reg = SampledRegion(transect_unit([[0.2, 0.5], [0.5, 0.5]]), 0.15)
        support = ObservedLocationSupport(LINE_SUPPORT, reg, 0.1)
        rule = line_rule(support, 128)
        assert rule.total == pytest.approx(0.6, abs=1e-12)

    def test_parallel_line_nodes_at_perpendicular_distance(self):
        reg = SampledRegion(transect_unit([[0.2, 0.5], [0.5, 0.5]]), 0.15)
        support = ObservedLocationSupport(LINE_SUPPORT, reg, 0.1)
        rule = line_rule(support, 64)
        assert np.allclose(np.abs(rule.nodes[:, 1] - 0.5), 0.1, atol=1e-12)

    def test_constant_integrand_mean(self):
        reg = SampledRegion(point_unit(0.5, 0.5), 0.04)
        support = ObservedLocationSupport(LINE_SUPPORT, reg, 0.02)
        rule = line_rule(support, 32)
        c = 3.7
        mean = rule.integrate(np.full(len(rule.nodes), c)) / rule.total
        assert mean == pytest.approx(c)

    def test_distance_beyond_truncation_radius_errors(self):
        reg = SampledRegion(point_unit(0.5, 0.5), 0.04)
        with pytest.raises(DataError):
            ObservedLocationSupport(LINE_SUPPORT, reg, 0.05)

    def test_too_few_nodes_errors(self):
        reg = SampledRegion(point_unit(0.5, 0.5), 0.04)
        support = ObservedLocationSupport(LINE_SUPPORT, reg, 0.02)
        with pytest.raises(ConfigError):
            line_rule(support, 4)

    def test_region_support_measure(self):
        disk = ObservedLocationSupport(REGION_SUPPORT,
                                       SampledRegion(point_unit(0, 0), 0.04))
        assert disk.measure == pytest.approx(math.pi * 0.04 ** 2)
        strip = ObservedLocationSupport(
            REGION_SUPPORT,
            SampledRegion(transect_unit([[0, 0], [0.3, 0]]), 0.02))
        assert strip.measure == pytest.approx(0.012)


class TestNativeAreaRule:
    def test_nodes_are_grid_cell_centers(self):
        reg = SampledRegion(point_unit(0.3, 0.3), 0.21)
        rule = native_area_rule(reg, 0.0, 0.0, 0.2, 0.2)
        assert len(rule.nodes) == 5
        assert rule.total == pytest.approx(5 * 0.04)
        frac = (rule.nodes - 0.1) / 0.2
        assert np.allclose(frac, np.round(frac), atol=1e-12)


class TestPartitions:
    def test_unit_square_10x10(self, toy_design):
        grid = build_partitions(StudyRegion.unit_square(), 10, 10, toy_design)
        assert grid.n_cells == 100
        assert grid.cell_area == pytest.approx(0.01)

    def test_cell_areas_sum_to_region_area(self, toy_design):
        region = StudyRegion(0.0, 0.0, 1.3, 0.7)
        grid = build_partitions(region, 7, 3, toy_design)
        assert grid.n_cells * grid.cell_area == pytest.approx(
            region.area, rel=1e-9)

    def test_single_point_marks_single_cell(self):
        design = SurveyDesign((SampledRegion(point_unit(0.05, 0.05), 0.04),))
        grid = build_partitions(StudyRegion.unit_square(), 10, 10, design)
        assert grid.sampled.sum() == 1
        assert grid.sampled[0]

    def test_empty_design_all_unsampled(self):
        grid = build_partitions(StudyRegion.unit_square(), 10, 10,
                                SurveyDesign(()))
        assert not grid.sampled.any()

    def test_transect_marks_every_crossed_cell(self):
        design = SurveyDesign((
            SampledRegion(transect_unit([[0.05, 0.05], [0.95, 0.05]]), 0.02),
        ))
        grid = build_partitions(StudyRegion.unit_square(), 10, 10, design)
        assert grid.sampled.sum() == 10
        assert grid.sampled[:10].all()


class TestCheckNonoverlap:
    def test_disjoint_points(self):
        design = SurveyDesign((
            SampledRegion(point_unit(0.2, 0.2, "a"), 0.04),
            SampledRegion(point_unit(0.3, 0.2, "b"), 0.04),
        ))
        ok, pairs = check_nonoverlap(design)
        assert ok and pairs == []

    def test_overlapping_traps_reported(self):
        design = SurveyDesign((
            SampledRegion(trap_unit(0.20, 0.2, "a"), 0.02),
            SampledRegion(trap_unit(0.23, 0.2, "b"), 0.02),
        ))
        ok, pairs = check_nonoverlap(design)
        assert not ok
        assert pairs == [("a", "b")]

    def test_single_unit_vacuous(self):
        design = SurveyDesign((SampledRegion(point_unit(0.5, 0.5), 0.04),))
        assert check_nonoverlap(design) == (True, [])


class TestDesignFile:
    def test_round_trip(self, tmp_path, toy_design):
        path = tmp_path / "design.csv"
        save_design(toy_design, path)
        loaded = load_design(path)
        assert [r.unit.id for r in loaded.regions] == \
            [r.unit.id for r in toy_design.regions]
        for a, b in zip(loaded.regions, toy_design.regions):
            assert a.radius == b.radius
            assert np.allclose(a.unit.xy, b.unit.xy)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "design.csv"
        path.write_text("name,kind\n")
        with pytest.raises(DataError):
            load_design(path)

    def test_bad_radius_names_line(self, tmp_path):
        path = tmp_path / "design.csv"
        path.write_text("id,kind,radius,geometry\np1,point,abc,0.5 0.5\n")
        with pytest.raises(DataError, match=":2"):
            load_design(path)


class TestInvariantsAndValidation:
    def test_transect_needs_two_vertices(self):
        with pytest.raises(ConfigError):
            SurveyUnit("t", "transect", np.array([[0.0, 0.0]]))

    def test_zero_length_transect_rejected(self):
        with pytest.raises(ConfigError):
            SurveyUnit("t", "transect", np.array([[0.1, 0.1], [0.1, 0.1]]))

    def test_positive_radius_required(self):
        with pytest.raises(ConfigError):
            SampledRegion(point_unit(0.5, 0.5), 0.0)

    def test_strip_membership_excludes_beyond_ends(self):
        reg = SampledRegion(transect_unit([[0.2, 0.5], [0.5, 0.5]]), 0.1)
        inside = reg.contains(np.array([[0.35, 0.55], [0.12, 0.5],
                                        [0.35, 0.65]]))
        assert inside.tolist() == [True, False, False]

    def test_masked_region_area_and_membership(self):
        tri = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))
        region = StudyRegion(0, 0, 1, 1, mask=tri)
        assert region.area == pytest.approx(0.5)
        inside = region.contains(np.array([[0.2, 0.2], [0.8, 0.8]]))
        assert inside.tolist() == [True, False]
