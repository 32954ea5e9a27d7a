"""Efficiency grids, the rest-voltage fit, the optimizer, and rendering."""

import math

import numpy as np
import pytest

from capcycle import (
    ClosedFormObjective,
    ConfigError,
    CycleSpec,
    DeviceParams,
    EfficiencyGrid,
    GridMethod,
    InfeasibleEnergyRequirement,
    OperatingWindow,
    RankDeficientFit,
    RestPlan,
    RestVoltages,
    build_grid,
    efficiency_no_rest,
    efficiency_with_rest,
    fit_self_discharge,
    load_rest_voltage_rows,
    measured_grid,
    optimize_window,
    preset,
    render_map,
    usable_energy_fraction,
)
from capcycle.effmap import PU_LEVELS, SelfDischargeModel

# Frozen regression constants for the embedded 50 F rest-drift table,
# computed beforehand with an independent least-squares oracle.
SLOPE_SD = 54.421228  # mV per volt of window span
ICPT_SD = 13.147634  # mV
R2_SD = 0.993766
SLOPE_SC = 45.944467
ICPT_SC = 6.382082
R2_SC = 0.977772


def _model(**kw):
    base = dict(
        slope_sd=50.0, intercept_sd=5.0, slope_sc=40.0, intercept_sc=3.0,
        fit_quality_sd=1.0, fit_quality_sc=1.0, fit_quality=1.0, n_rows=15,
    )
    base.update(kw)
    return SelfDischargeModel(**base)


class TestSelfDischargeFit:
    def test_embedded_table_reproduces_pinned_regression(self):
        m = fit_self_discharge(load_rest_voltage_rows())
        assert m.slope_sd == pytest.approx(SLOPE_SD, abs=1e-6)
        assert m.intercept_sd == pytest.approx(ICPT_SD, abs=1e-6)
        assert m.fit_quality_sd == pytest.approx(R2_SD, abs=1e-6)
        assert m.slope_sc == pytest.approx(SLOPE_SC, abs=1e-6)
        assert m.intercept_sc == pytest.approx(ICPT_SC, abs=1e-6)
        assert m.fit_quality_sc == pytest.approx(R2_SC, abs=1e-6)
        assert m.fit_quality == m.fit_quality_sc  # the worse of the two
        assert m.n_rows == 15

    def test_synthetic_exact_line(self):
        rows = [
            (0.0, dv, (50.0 * dv + 5.0) / 1000.0, (40.0 * dv + 3.0) / 1000.0)
            for dv in (0.3, 0.9, 1.5, 2.1, 2.7)
        ]
        m = fit_self_discharge(rows)
        assert m.slope_sd == pytest.approx(50.0, abs=1e-9)
        assert m.intercept_sd == pytest.approx(5.0, abs=1e-9)
        assert m.slope_sc == pytest.approx(40.0, abs=1e-9)
        assert m.fit_quality == pytest.approx(1.0, abs=1e-12)

    def test_too_few_rows(self):
        with pytest.raises(RankDeficientFit):
            fit_self_discharge([(0.0, 1.0, 0.05, 0.04), (0.0, 2.0, 0.1, 0.08)])

    def test_identical_spans_rank_deficient(self):
        rows = [(0.0, 1.35, 0.089, 0.07), (0.68, 2.03, 0.09, 0.068),
                (1.35, 2.70, 0.09, 0.068)]
        with pytest.raises(RankDeficientFit):
            fit_self_discharge(rows)

    def test_negative_slope_rejected(self):
        rows = [(0.0, dv, (0.1 - 0.03 * dv), 0.01 * dv) for dv in (0.5, 1.5, 2.5)]
        with pytest.raises(ConfigError):
            fit_self_discharge(rows)

    def test_predictions_clamped_at_zero(self):
        m = _model(intercept_sd=-20.0, intercept_sc=-20.0)
        rv = m.predict(0.1)
        assert rv.v_sd == 0.0
        assert rv.v_sc == 0.0

    def test_predict_units(self):
        rv = _model().predict(2.0)
        assert rv.v_sd == pytest.approx(0.105)  # (50*2 + 5) mV
        assert rv.v_sc == pytest.approx(0.083)


class TestBuildGridClosedForm:
    def test_lossless_cells_exactly_one(self):
        d = DeviceParams(c_main=10.0, r_series=0.0, v_rated=2.7)
        g = build_grid(d, 1.0)
        defined = g.defined_mask()
        assert np.all(g.eta[defined] == 1.0)

    def test_undefined_exactly_lower_triangle(self):
        g = build_grid(preset("100F", ideal=True), 4.7)
        for r, vM in enumerate(g.vM_levels):
            for j, vm in enumerate(g.vm_levels):
                assert np.isnan(g.eta[r, j]) == (vm >= vM)

    def test_cells_match_direct_evaluation(self):
        d = preset("100F", ideal=True)
        g = build_grid(d, 4.7)
        s = CycleSpec(i_c=4.7, v_min=0.5 * 2.7, v_max=2.7)
        assert g.value(0.5, 1.0) == pytest.approx(
            efficiency_no_rest(d, s), rel=1e-12
        )

    def test_rest_cells_use_model_prediction(self):
        d = preset("100F", ideal=True)
        m = _model()
        g = build_grid(d, 4.7, rest=RestPlan(duration=1800.0, model=m))
        span = (1.0 - 0.5) * 2.7
        s = CycleSpec(i_c=4.7, v_min=0.5 * 2.7, v_max=2.7)
        expect = efficiency_with_rest(d, s, m.predict(span))
        assert g.value(0.5, 1.0) == pytest.approx(expect, rel=1e-12)
        assert g.rest is True

    def test_rest_grid_below_everywhere(self):
        d = preset("100F", ideal=True)
        g0 = build_grid(d, 4.7)
        g1 = build_grid(d, 4.7, rest=RestPlan(model=_model()))
        defined = g1.defined_mask()
        assert np.all(g1.eta[defined] < g0.eta[defined])

    def test_narrow_cells_undefined_not_errors(self):
        d = DeviceParams(c_main=10.0, r_series=0.5, v_rated=2.7)
        g = build_grid(d, 1.0)  # drop = 1.0 V wipes out the 0.25-pu windows
        assert math.isnan(g.value(0.0, 0.25))
        assert not math.isnan(g.value(0.0, 1.0))

    def test_low_quality_model_gated(self):
        m = _model(fit_quality=0.8, fit_quality_sd=0.8)
        with pytest.raises(ConfigError, match="fit quality"):
            build_grid(preset("100F", ideal=True), 4.7, rest=RestPlan(model=m))

    def test_rest_without_model_rejected(self):
        with pytest.raises(ConfigError):
            build_grid(preset("100F", ideal=True), 4.7, rest=RestPlan())

    def test_measured_method_rejected(self):
        with pytest.raises(ConfigError):
            build_grid(preset("100F", ideal=True), 4.7, method=GridMethod.MEASURED)

    def test_bad_levels(self):
        d = preset("100F", ideal=True)
        with pytest.raises(ConfigError):
            build_grid(d, 4.7, levels=(0.5,))
        with pytest.raises(ConfigError):
            build_grid(d, 4.7, levels=(0.5, 0.5))
        with pytest.raises(ConfigError):
            build_grid(d, 4.7, levels=(0.0, 1.5))


class TestBuildGridSimulated:
    def test_matches_closed_form_within_0p2_points(self):
        d = preset("100F", ideal=True)
        levels = (0.0, 0.5, 1.0)
        cf = build_grid(d, 4.7, levels=levels)
        sim = build_grid(d, 4.7, levels=levels, method=GridMethod.SIMULATED,
                         sim_cycles=4)
        defined = cf.defined_mask()
        assert np.array_equal(defined, sim.defined_mask())
        assert np.all(np.abs(cf.eta[defined] - sim.eta[defined]) < 0.002)


class TestMeasuredGrids:
    def test_spot_cells(self):
        g = measured_grid("100F")
        assert g.value(0.9, 1.0) == pytest.approx(0.941)
        assert g.value(0.0, 0.25) == pytest.approx(0.623)
        assert g.method is GridMethod.MEASURED
        assert g.rest is False

    def test_no_rest_surface_monotone_in_vm_and_peaks_at_full_vM(self):
        for device in ("10F", "50F", "100F"):
            g = measured_grid(device)
            for r, vM in enumerate(g.vM_levels):
                row = [g.eta[r, j] for j, vm in enumerate(g.vm_levels) if vm < vM]
                row = [x for x in row if not math.isnan(x)]
                assert row == sorted(row), (device, vM)
            for j, vm in enumerate(g.vm_levels):
                col = g.eta[:, j]
                defined = ~np.isnan(col)
                if defined.any():
                    assert np.nanargmax(col) == len(g.vM_levels) - 1, (device, vm)

    def test_rest_surface_below_no_rest_cell_wise(self):
        for device in ("10F", "50F", "100F"):
            g0 = measured_grid(device, rest=False)
            g1 = measured_grid(device, rest=True)
            defined = g0.defined_mask()
            assert np.array_equal(defined, g1.defined_mask())
            assert np.all(g1.eta[defined] < g0.eta[defined]), device

    def test_rest_surface_is_not_monotone(self):
        # the 10 F with-rest surface dips between (0.5, 0.7) and (0.5, 0.9),
        # so monotonicity must not be asserted there
        g = measured_grid("10F", rest=True)
        assert g.value(0.5, 0.7) > g.value(0.5, 0.9)

    def test_unknown_device(self):
        with pytest.raises(ConfigError):
            measured_grid("25F")


class TestOptimizer:
    def test_closed_form_analytic_three_quarters(self):
        obj = ClosedFormObjective(device=preset("100F", ideal=True), i_c=4.7)
        pt = optimize_window(obj, 0.75)
        assert pt.window.vm_pu == pytest.approx(0.5, abs=1e-12)
        assert pt.window.vM_pu == 1.0
        assert pt.energy_fraction == pytest.approx(0.75, abs=1e-12)
        assert pt.eta == pytest.approx(obj.eta(0.5, 1.0), rel=1e-12)

    def test_full_fraction_unique_point(self):
        obj = ClosedFormObjective(device=preset("100F", ideal=True), i_c=4.7)
        pt = optimize_window(obj, 1.0)
        assert (pt.window.vm_pu, pt.window.vM_pu) == (0.0, 1.0)
        g = build_grid(preset("100F", ideal=True), 4.7)
        pt2 = optimize_window(g, 1.0)
        assert (pt2.window.vm_pu, pt2.window.vM_pu) == (0.0, 1.0)

    def test_infeasible_fraction(self):
        obj = ClosedFormObjective(device=preset("100F", ideal=True), i_c=4.7)
        with pytest.raises(InfeasibleEnergyRequirement):
            optimize_window(obj, 1.2)

    def test_nonpositive_fraction(self):
        obj = ClosedFormObjective(device=preset("100F", ideal=True), i_c=4.7)
        with pytest.raises(ConfigError):
            optimize_window(obj, 0.0)

    def test_grid_result_dominates_every_feasible_cell(self):
        g = build_grid(preset("100F", ideal=True), 4.7)
        f = 0.4
        pt = optimize_window(g, f)
        assert pt.energy_fraction >= f
        for r, vM in enumerate(g.vM_levels):
            for j, vm in enumerate(g.vm_levels):
                if np.isnan(g.eta[r, j]) or vM * vM - vm * vm < f:
                    continue
                assert pt.eta >= g.eta[r, j]

    def test_rest_model_result_dominates_naive_point(self):
        m = fit_self_discharge(load_rest_voltage_rows())
        obj = ClosedFormObjective(
            device=preset("50F", ideal=True), i_c=3.95, rest_model=m, rest=True
        )
        pt = optimize_window(obj, 0.5)
        naive = obj.eta(1.0 / math.sqrt(2.0), 1.0)
        assert pt.eta >= naive
        assert pt.energy_fraction >= 0.5 - 1e-12

    def test_consistency_invariant(self):
        obj = ClosedFormObjective(device=preset("50F", ideal=True), i_c=3.95)
        pt = optimize_window(obj, 0.6)
        assert pt.energy_fraction == pytest.approx(
            usable_energy_fraction(pt.window), rel=1e-12
        )

    def test_tie_breaks_toward_larger_fraction_then_vm(self):
        levels = (0.0, 0.6, 0.8, 1.0)
        eta = np.full((4, 4), np.nan)
        eta[3, 0] = 0.9   # (vm=0,   vM=1):   fraction 1.0
        eta[3, 1] = 0.9   # (vm=0.6, vM=1):   fraction 0.64
        eta[2, 0] = 0.9   # (vm=0,   vM=0.8): fraction 0.64
        g = EfficiencyGrid(levels, levels, eta, GridMethod.MEASURED, False)
        pt = optimize_window(g, 0.2)
        assert (pt.window.vm_pu, pt.window.vM_pu) == (0.0, 1.0)  # largest fraction
        # dyadic levels make the two fractions exactly equal (both 9/64)
        levels2 = (0.0, 0.375, 0.5, 0.625)
        eta2 = np.full((4, 4), np.nan)
        eta2[1, 0] = 0.9  # (vm=0,   vM=0.375)
        eta2[3, 2] = 0.9  # (vm=0.5, vM=0.625)
        g2 = EfficiencyGrid(levels2, levels2, eta2, GridMethod.MEASURED, False)
        pt2 = optimize_window(g2, 0.1)
        assert pt2.window.vm_pu == 0.5  # equal fractions: larger vm wins


class TestRenderMap:
    def test_writes_csv_and_svg(self, tmp_path):
        g = measured_grid("100F")
        csv_path, svg_path = render_map(g, tmp_path / "m100")
        assert csv_path.exists() and svg_path.exists()
        text = csv_path.read_text()
        first = text.splitlines()[0]
        assert first == "vmpu\\vMpu,0,0.25,0.5,0.7,0.9,1"
        assert "94.1" in svg_path.read_text()

    def test_undefined_cells_blank_in_csv(self, tmp_path):
        g = measured_grid("100F")
        csv_path, _ = render_map(g, tmp_path / "m")
        rows = csv_path.read_text().splitlines()
        # first data row is vM=0: no vm < 0 exists, so every cell is blank
        assert rows[1] == "0" + "," * len(PU_LEVELS)

    def test_byte_identical_outputs(self, tmp_path):
        g = measured_grid("50F", rest=True)
        c1, s1 = render_map(g, tmp_path / "a")
        c2, s2 = render_map(g, tmp_path / "b")
        assert c1.read_bytes() == c2.read_bytes()
        assert s1.read_bytes() == s2.read_bytes()

    def test_suffix_stripped(self, tmp_path):
        g = measured_grid("10F")
        csv_path, svg_path = render_map(g, tmp_path / "out.svg")
        assert csv_path.name == "out.csv"
        assert svg_path.name == "out.svg"

    def test_too_small_grid_rejected(self, tmp_path):
        levels = (0.0, 1.0)
        eta = np.full((2, 2), np.nan)
        eta[1, 0] = 0.9  # a single defined cell
        g = EfficiencyGrid(levels, levels, eta, GridMethod.MEASURED, False)
        with pytest.raises(ConfigError):
            render_map(g, tmp_path / "tiny")

    def test_percent_labels_with_one_decimal(self, tmp_path):
        g = measured_grid("100F")
        _, svg_path = render_map(g, tmp_path / "lab")
        body = svg_path.read_text()
        for cell in ("62.3", "89.1", "92.4"):
            assert cell in body
