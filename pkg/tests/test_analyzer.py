"""Trace analyzer: segmentation, energy bookkeeping, and identification."""

import json
import math

import numpy as np
import pytest

from capcycle import (
    AcquisitionConfig,
    AnalysisReport,
    ConfigError,
    CycleMetrics,
    CycleSpec,
    DeviceParams,
    InsufficientData,
    MalformedProtocol,
    NoCyclesFound,
    NoJumpFound,
    Phase,
    Redistribution,
    Trace,
    TraceParseError,
    analyze_trace,
    cycle_metrics,
    detect_steady,
    efficiency_no_rest,
    identify_capacitance,
    identify_resistance,
    read_trace_csv,
    run_protocol,
    segment,
    write_trace_csv,
)

DEV = DeviceParams(c_main=10.0, r_series=0.0922, v_rated=2.7)
SPEC_RESTS = CycleSpec(
    i_c=0.4, v_min=0.5, v_max=2.5,
    rest_after_charge=20.0, rest_after_discharge=20.0, max_cycles=3,
)

TWO_BRANCH = DeviceParams(
    c_main=52.0,
    r_series=0.0088,
    v_rated=2.7,
    redistribution=Redistribution(c_branch=5.2, r_branch=4.0),
    r_leak=9000.0,
)


@pytest.fixture(scope="module")
def rest_trace():
    return run_protocol(DEV, SPEC_RESTS)


@pytest.fixture(scope="module")
def rest_segments(rest_trace):
    return segment(rest_trace)


def _mk_trace(t, v, i, sp):
    return Trace(
        t=np.asarray(t, float), v=np.asarray(v, float), i=np.asarray(i, float),
        sample_period=sp,
    )


class TestSegmentation:
    def test_matches_simulator_boundaries_within_one_sample(self, rest_trace, rest_segments):
        ref = rest_trace.meta["boundaries"]
        assert len(rest_segments) == len(ref)
        sp = rest_trace.sample_period
        for got, exp in zip(rest_segments, ref):
            assert got.kind.value == exp.phase
            assert abs(got.t_start - exp.t_start) <= sp + 1e-9
            assert abs(got.t_end - exp.t_end) <= sp + 1e-9

    def test_segment_kinds_alternate_active_rest(self, rest_segments):
        kinds = [s.kind for s in rest_segments]
        assert kinds[:4] == [Phase.CHARGE, Phase.REST_HIGH, Phase.DISCHARGE, Phase.REST_LOW]

    def test_short_glitch_merged_into_neighbour(self):
        sp = 0.1
        n = 400
        i = np.concatenate([np.full(200, 1.0), np.full(200, -1.0)])
        i[100] = 0.0  # single dropped sample inside the charge phase
        v = np.cumsum(i) * sp / 10.0 + 1.0
        t = np.arange(1, n + 1) * sp
        segs = segment(_mk_trace(t, v, i, sp), min_segment=1.0)
        assert [s.kind for s in segs] == [Phase.CHARGE, Phase.DISCHARGE]

    def test_min_segment_zero_keeps_short_rests(self):
        sp = 0.1
        i = np.concatenate(
            [np.full(200, 1.0), [0.0], np.full(200, -1.0), [0.0]]
        )
        v = np.cumsum(i) * sp / 10.0 + 1.0
        t = np.arange(1, i.size + 1) * sp
        tr = _mk_trace(t, v, i, sp)
        kinds0 = [s.kind for s in segment(tr, min_segment=0.0)]
        assert kinds0 == [Phase.CHARGE, Phase.REST_HIGH, Phase.DISCHARGE, Phase.REST_LOW]
        kinds1 = [s.kind for s in segment(tr, min_segment=1.0)]
        assert kinds1 == [Phase.CHARGE, Phase.DISCHARGE]

    def test_glitch_split_surfaces_when_filter_disabled(self):
        sp = 0.1
        i = np.concatenate([np.full(200, 1.0), np.full(200, -1.0)])
        i[100] = 0.0  # same glitch as above, but no merge floor
        v = np.cumsum(i) * sp / 10.0 + 1.0
        t = np.arange(1, i.size + 1) * sp
        with pytest.raises(MalformedProtocol):
            segment(_mk_trace(t, v, i, sp), min_segment=0.0)

    def test_no_active_samples_raises(self):
        sp = 0.1
        n = 50
        t = np.arange(1, n + 1) * sp
        with pytest.raises(NoCyclesFound):
            segment(_mk_trace(t, np.full(n, 1.0), np.zeros(n), sp))

    def test_consecutive_same_kind_actives_malformed(self):
        sp = 0.1
        i = np.concatenate([np.full(100, 1.0), np.zeros(2000), np.full(100, 1.0)])
        v = np.cumsum(i) * sp / 10.0 + 0.5
        t = np.arange(1, i.size + 1) * sp
        with pytest.raises(MalformedProtocol) as exc:
            segment(_mk_trace(t, v, i, sp))
        assert exc.value.boundary_index is not None


class TestEnergyBookkeeping:
    def test_lossless_device_unit_efficiency(self):
        d = DeviceParams(c_main=10.0, r_series=0.0, v_rated=2.7)
        tr = run_protocol(d, CycleSpec(i_c=0.4, v_min=0.5, v_max=2.5, max_cycles=4))
        rep = analyze_trace(tr)
        # cycle 1 misses the unobservable pre-trace interval; every later
        # cycle telescopes exactly
        for m in rep.steady.per_cycle[1:]:
            assert m.eta == pytest.approx(1.0, abs=1e-9)
        assert rep.steady.per_cycle[0].eta == pytest.approx(1.0, abs=1e-3)

    def test_eta_matches_closed_form_within_0p2_points(self, rest_trace):
        rep = analyze_trace(rest_trace)
        eta_cf = efficiency_no_rest(DEV, SPEC_RESTS)
        assert abs(rep.steady.mean.eta - eta_cf) < 0.002

    def test_loss_breakdown_balances_exactly(self, rest_trace):
        rep = analyze_trace(rest_trace)
        for m in rep.steady.per_cycle:
            total = m.loss_charge + m.loss_rest + m.loss_discharge
            assert total == pytest.approx(m.e_in - m.e_out, abs=1e-6)

    def test_losses_nonnegative_for_single_branch(self, rest_trace):
        rep = analyze_trace(rest_trace)
        for m in rep.steady.per_cycle:
            assert m.loss_charge >= 0
            assert m.loss_discharge >= 0

    def test_rest_voltages_near_zero_for_single_branch(self, rest_trace):
        rep = analyze_trace(rest_trace)
        m = rep.steady.mean
        assert abs(m.v_sd) < 1e-6
        assert abs(m.v_sc) < 1e-6

    def test_two_branch_rest_voltages_positive(self):
        spec = CycleSpec(
            i_c=3.95, v_min=0.0, v_max=2.7,
            rest_after_charge=600.0, rest_after_discharge=600.0, max_cycles=4,
        )
        tr = run_protocol(TWO_BRANCH, spec)
        rep = analyze_trace(tr)
        assert rep.steady.mean.v_sd > 0.005
        assert rep.steady.mean.v_sc > 0.005

    def test_charge_in_coulombs(self, rest_trace):
        rep = analyze_trace(rest_trace)
        m = rep.steady.per_cycle[1]  # cycle 1 lacks the pre-trace interval
        # 0.4 A for ~48 s, within a couple of sample periods' worth of charge
        assert m.q_in == pytest.approx(0.4 * 48.156, abs=2 * 0.4 * rest_trace.sample_period)
        assert m.q_in == pytest.approx(m.q_out, rel=1e-9)

    def test_eta_stable_across_sampling_rates(self):
        etas = []
        for sp in (0.1, 0.5):
            tr = run_protocol(DEV, SPEC_RESTS, AcquisitionConfig(sample_period=sp))
            etas.append(analyze_trace(tr).steady.mean.eta)
        assert abs(etas[0] - etas[1]) < 0.0005  # < 0.05 percentage points


def _metrics(cycle, q_in, q_out):
    return CycleMetrics(
        cycle_index=cycle, q_in=q_in, q_out=q_out, e_in=10.0, e_out=9.0,
        t_charge=48.0, t_discharge=48.0, v_sd=0.0, v_sc=0.0, eta=0.9,
        loss_charge=0.5, loss_rest=0.0, loss_discharge=0.5,
    )


class TestSteadyDetection:
    def test_imbalance_sequence_steadies_at_four(self):
        ratios = [0.90, 0.95, 0.985, 0.995, 0.999]
        per = [_metrics(c + 1, 1.0, r) for c, r in enumerate(ratios)]
        rep = detect_steady(per, tol=0.01)
        assert rep.steady_from_cycle == 4
        assert rep.window == (4, 5)  # only steady cycles enter the window
        assert rep.window_rule == "last-steady-cycles"
        assert not rep.never_steady

    def test_window_17_20_when_long(self):
        per = [_metrics(c + 1, 1.0, 1.0) for c in range(25)]
        rep = detect_steady(per)
        assert rep.window == (17, 20)
        assert rep.window_rule == "cycles-17-20"

    def test_never_steady_flagged(self):
        per = [_metrics(c + 1, 1.0, 0.5) for c in range(6)]
        rep = detect_steady(per, tol=0.01)
        assert rep.never_steady
        assert rep.steady_from_cycle is None
        assert rep.window == (3, 6)
        assert rep.window_rule == "never-steady-fallback"

    def test_relapse_resets_steady_from(self):
        # cycle 3 briefly balances but cycle 4 relapses: steady starts at 5
        ratios = [0.5, 0.6, 0.999, 0.9, 0.995, 0.999]
        per = [_metrics(c + 1, 1.0, r) for c, r in enumerate(ratios)]
        rep = detect_steady(per, tol=0.01)
        assert rep.steady_from_cycle == 5

    def test_mean_is_arithmetic_over_window(self):
        per = [_metrics(1, 1.0, 1.0), _metrics(2, 3.0, 3.0)]
        rep = detect_steady(per)
        assert rep.mean.q_in == pytest.approx(2.0)

    def test_too_few_cycles(self):
        with pytest.raises(InsufficientData):
            detect_steady([_metrics(1, 1.0, 1.0)])

    def test_bad_tolerance(self):
        per = [_metrics(1, 1.0, 1.0), _metrics(2, 1.0, 1.0)]
        with pytest.raises(ConfigError):
            detect_steady(per, tol=0.0)


class TestIdentification:
    def test_resistance_within_two_percent(self, rest_trace, rest_segments):
        est = identify_resistance(rest_trace, rest_segments)
        assert est.value == pytest.approx(DEV.r_series, rel=0.02)
        assert est.n >= 2

    def test_capacitance_within_one_percent(self, rest_trace, rest_segments):
        est = identify_capacitance(rest_trace, rest_segments)
        assert est.value == pytest.approx(DEV.c_main, rel=0.01)

    def test_quantized_trace_still_identifies(self):
        tr = run_protocol(DEV, SPEC_RESTS, AcquisitionConfig(quantize=True))
        segs = segment(tr)
        r = identify_resistance(tr, segs)
        c = identify_capacitance(tr, segs)
        assert r.value == pytest.approx(DEV.r_series, rel=0.02)
        assert c.value == pytest.approx(DEV.c_main, rel=0.01)

    def test_no_rest_phases_no_jump(self):
        tr = run_protocol(DEV, CycleSpec(i_c=0.4, v_min=0.5, v_max=2.5))
        segs = segment(tr)
        with pytest.raises(NoJumpFound):
            identify_resistance(tr, segs)

    def test_capacitance_needs_long_enough_segments(self):
        sp = 0.1
        i = np.concatenate([np.full(5, 1.0), np.zeros(40), np.full(5, -1.0), np.zeros(40)])
        v = 1.0 + np.cumsum(i) * sp / 10.0
        t = np.arange(1, i.size + 1) * sp
        segs = segment(_mk_trace(t, v, i, sp), min_segment=0.0)
        with pytest.raises(InsufficientData):
            identify_capacitance(_mk_trace(t, v, i, sp), segs)


class TestAnalyzeTrace:
    def test_report_roundtrips_to_json(self, rest_trace):
        rep = analyze_trace(rest_trace)
        blob = rep.to_json()
        doc = json.loads(blob)
        assert doc["schema_version"] == 1
        assert doc["steady"]["mean"]["eta"] == pytest.approx(rep.steady.mean.eta)
        ident = doc["identification"]
        assert ident["r_series_ohm"]["value"] == pytest.approx(rep.r_series.value)
        assert ident["c_main_F"]["value"] == pytest.approx(rep.c_main.value)
        assert doc["n_samples"] == rest_trace.t.size
        assert blob.endswith("\n")

    def test_identification_failure_downgrades_to_warning(self):
        tr = run_protocol(DEV, CycleSpec(i_c=0.4, v_min=0.5, v_max=2.5, max_cycles=2))
        rep = analyze_trace(tr)
        assert rep.r_series is None
        assert any("resistance" in w for w in rep.warnings)

    def test_cycle_without_discharge_dropped_with_warning(self, rest_trace):
        # chop the trace inside the final cycle's high rest, before its
        # discharge begins
        b = rest_trace.meta["boundaries"][-3]
        sp = rest_trace.sample_period
        cut = int(round(b.t_start / sp)) + 30
        tr = _mk_trace(rest_trace.t[:cut], rest_trace.v[:cut], rest_trace.i[:cut], sp)
        rep = analyze_trace(tr)
        assert len(rep.steady.per_cycle) == 2
        assert any("discharge" in w for w in rep.warnings)

    def test_no_complete_cycle_raises(self):
        sp = 0.1
        i = np.full(100, 1.0)
        v = 0.5 + np.cumsum(i) * sp / 10.0
        t = np.arange(1, i.size + 1) * sp
        with pytest.raises(NoCyclesFound):
            analyze_trace(_mk_trace(t, v, i, sp))


class TestTraceCsv:
    def test_roundtrip_byte_exact(self, rest_trace, tmp_path):
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_trace_csv(rest_trace, p1)
        tr2 = read_trace_csv(p1)
        write_trace_csv(tr2, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert tr2.sample_period == pytest.approx(rest_trace.sample_period)

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t_s,v_V,i_A\n0.1,0.5,0.4\n0.2,oops,0.4\n")
        with pytest.raises(TraceParseError) as exc:
            read_trace_csv(p)
        assert "line 3" in str(exc.value)

    def test_wrong_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,volts,amps\n0.1,0.5,0.4\n")
        with pytest.raises(TraceParseError) as exc:
            read_trace_csv(p)
        assert "line 1" in str(exc.value)

    def test_nonuniform_sampling_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t_s,v_V,i_A\n0.1,0.5,0.4\n0.2,0.6,0.4\n0.45,0.7,0.4\n")
        with pytest.raises(TraceParseError):
            read_trace_csv(p)
